#pragma once

#include "mblab/corpus/corpus.hpp"
#include "mblab/model/model.hpp"

namespace mblab::testing {

// Small corpus: V=4 (2 general, 1 audio pair), short utterances.
inline CorpusSpec tiny_corpus_spec(int n = 4, std::uint64_t seed = 3) {
  CorpusSpec s;
  s.vocab_size = 4;
  s.n_general = 2;
  s.n_audio_pairs = 1;
  s.n_video_pairs = 0;
  s.frames_per_token_audio = 2;
  s.frames_per_token_video = 1;
  s.audio_dim = 3;
  s.video_dim = 2;
  s.min_len = 1;
  s.max_len = 3;
  s.n_utterances = n;
  s.seed = seed;
  return s;
}

// d_model = 8 with one block per stage: a few thousand parameters, small
// enough for exhaustive finite differences.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.audio_dim = 3;
  c.video_dim = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 8;
  c.n_audio_blocks = 1;
  c.n_video_blocks = 1;
  c.n_fusion_blocks = 1;
  c.n_joint_blocks = 1;
  c.n_decoder_blocks = 1;
  c.vocab_size_with_blank = 5;
  c.max_len = 16;
  c.intermediate_ctc_taps = {1};
  return c;
}

}  // namespace mblab::testing
