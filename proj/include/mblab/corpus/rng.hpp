#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace mblab {

// SplitMix64 finalizer (Steele, Lea & Flood). Bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// FNV-1a of a purpose tag, so streams can be keyed by readable names.
constexpr std::uint64_t tag_hash(std::string_view tag) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

// Folds a sequence of words into one stream key.
constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t k = 0x6A09E667F3BCC909ULL;
  for (auto p : parts) k = mix64(k ^ mix64(p + 0x9E3779B97F4A7C15ULL));
  return k;
}

// Counter-based generator: output n of a stream is mix64(key + n * golden),
// i.e. SplitMix64 started at `key`. Streams are addressed by a key derived
// from (seed, entity id, purpose tag), so any substream can be produced
// independently and identically on every platform.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, std::uint64_t entity, std::string_view purpose)
      : key_(derive_key({seed, entity, tag_hash(purpose)})) {}

  std::uint64_t next() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // Uniform integer on [0, n); n > 0. Multiply-shift on the top 32 bits.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (cosine branch only).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace mblab
