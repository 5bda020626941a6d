#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mblab/numerics/tensor.hpp"

namespace mblab {

// Synthetic paired corpus. Token ids 1..V are laid out as
//   [1, G]                     general tokens (own prototype in both streams)
//   [G+1, G+2*Pa]              audio-confusable pairs (shared audio prototype)
//   [G+2*Pa+1, V]              video-confusable pairs (shared video prototype)
// Id 0 is the CTC blank and never appears in labels.
struct CorpusSpec {
  int vocab_size = 12;
  int n_general = 6;
  int n_audio_pairs = 2;
  int n_video_pairs = 1;
  int frames_per_token_audio = 4;
  int frames_per_token_video = 2;
  int audio_dim = 16;
  int video_dim = 12;
  double audio_noise = 0.6;
  double video_noise = 0.4;
  // Std of the Gaussian prototype entries.
  double prototype_scale = 1.0;
  int min_len = 3;
  int max_len = 8;
  int n_utterances = 2000;
  std::uint64_t seed = 1;
  // Utterance streams are keyed by split, so "train" and "test" corpora with
  // the same seed share prototypes but not samples.
  std::string split = "train";

  // Throws ConfigError naming the violated constraint.
  void validate() const;
  bool operator==(const CorpusSpec&) const = default;
};

enum class TokenClass { general, audio_confusable, video_confusable };

TokenClass token_class(const CorpusSpec& spec, int token);

struct Utterance {
  std::uint32_t id = 0;
  Tensor audio;  // [L*F_a x d_a]
  Tensor video;  // [L*F_v x d_v]
  std::vector<int> labels;
  std::vector<bool> natural_video_mask;  // true = frame available
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Utterance> utterances;
};

// Row t of `audio` is the prototype of token t (row 0 unused, zero).
struct Prototypes {
  Tensor audio;
  Tensor video;
};

Prototypes make_prototypes(const CorpusSpec& spec);

// Deterministic in spec (including seed and split). Frame values are rounded
// to float32 so the on-disk format is lossless.
Corpus generate_corpus(const CorpusSpec& spec);

bool utterances_equal(const Utterance& a, const Utterance& b);
bool corpora_equal(const Corpus& a, const Corpus& b);

// Bayes-optimal token error of a classifier that only sees one stream, in the
// noise-free limit: each shared prototype is a coin flip between its members.
double audio_only_error_floor(const CorpusSpec& spec);
double video_only_error_floor(const CorpusSpec& spec);

}  // namespace mblab
