#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mblab {

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);

// Bounds-checked little-endian reader; throws FormatError with the offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  std::string_view take(std::size_t n, const char* what);
  void seek(std::size_t offset, const char* what);

  std::size_t offset() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const;

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

// Throw IoError.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mblab
