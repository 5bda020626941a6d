#include "mblab/corpus/corpus.hpp"

#include "mblab/corpus/rng.hpp"
#include "mblab/errors.hpp"

namespace mblab {

void CorpusSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("corpus spec: " + msg); };
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (n_general < 0 || n_audio_pairs < 0 || n_video_pairs < 0) fail("class counts must be nonnegative");
  if (n_general + 2 * n_audio_pairs + 2 * n_video_pairs != vocab_size) {
    fail("n_general + 2*n_audio_pairs + 2*n_video_pairs (" +
         std::to_string(n_general + 2 * n_audio_pairs + 2 * n_video_pairs) + ") must equal vocab_size (" +
         std::to_string(vocab_size) + ")");
  }
  if (vocab_size > 62) fail("vocab_size must be <= 62 (tokens render as single characters)");
  if (frames_per_token_audio < 1 || frames_per_token_video < 1) fail("frames per token must be >= 1");
  if (audio_dim < 1 || video_dim < 1) fail("feature dims must be >= 1");
  if (!(audio_noise >= 0.0) || !(video_noise >= 0.0)) fail("noise std must be >= 0");
  if (!(prototype_scale > 0.0)) fail("prototype_scale must be > 0");
  if (min_len < 1 || max_len < min_len) fail("length range must satisfy 1 <= min_len <= max_len");
  if (n_utterances < 0) fail("n_utterances must be >= 0");
  if (split.empty()) fail("split must be nonempty");
}

TokenClass token_class(const CorpusSpec& spec, int token) {
  if (token < 1 || token > spec.vocab_size) throw ContractError("token id out of range: " + std::to_string(token));
  if (token <= spec.n_general) return TokenClass::general;
  if (token <= spec.n_general + 2 * spec.n_audio_pairs) return TokenClass::audio_confusable;
  return TokenClass::video_confusable;
}

namespace {

// Prototype slot: the token whose prototype a token uses (first pair member
// for shared prototypes).
int audio_slot(const CorpusSpec& spec, int token) {
  if (token_class(spec, token) == TokenClass::audio_confusable) {
    return spec.n_general + 1 + 2 * ((token - spec.n_general - 1) / 2);
  }
  return token;
}

int video_slot(const CorpusSpec& spec, int token) {
  if (token_class(spec, token) == TokenClass::video_confusable) {
    const int first = spec.n_general + 2 * spec.n_audio_pairs + 1;
    return first + 2 * ((token - first) / 2);
  }
  return token;
}

float as_f32(double v) { return static_cast<float>(v); }

}  // namespace

Prototypes make_prototypes(const CorpusSpec& spec) {
  spec.validate();
  const auto V = static_cast<std::size_t>(spec.vocab_size);
  Prototypes p{Tensor({V + 1, static_cast<std::size_t>(spec.audio_dim)}, 0.0),
               Tensor({V + 1, static_cast<std::size_t>(spec.video_dim)}, 0.0)};
  for (int token = 1; token <= spec.vocab_size; ++token) {
    CounterRng ra(spec.seed, static_cast<std::uint64_t>(audio_slot(spec, token)), "prototype.audio");
    for (int c = 0; c < spec.audio_dim; ++c) p.audio.at(token, c) = spec.prototype_scale * ra.normal();
    CounterRng rv(spec.seed, static_cast<std::uint64_t>(video_slot(spec, token)), "prototype.video");
    for (int c = 0; c < spec.video_dim; ++c) p.video.at(token, c) = spec.prototype_scale * rv.normal();
  }
  return p;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const Prototypes protos = make_prototypes(spec);
  Corpus corpus{spec, {}};
  corpus.utterances.reserve(static_cast<std::size_t>(spec.n_utterances));
  const std::uint64_t split_key = tag_hash(spec.split);
  for (int i = 0; i < spec.n_utterances; ++i) {
    const auto id = static_cast<std::uint32_t>(i);
    CounterRng labels_rng(derive_key({spec.seed, split_key, id, tag_hash("labels")}));
    CounterRng audio_rng(derive_key({spec.seed, split_key, id, tag_hash("noise.audio")}));
    CounterRng video_rng(derive_key({spec.seed, split_key, id, tag_hash("noise.video")}));

    Utterance u;
    u.id = id;
    const int len =
        spec.min_len + static_cast<int>(labels_rng.below(static_cast<std::uint64_t>(spec.max_len - spec.min_len + 1)));
    for (int k = 0; k < len; ++k) {
      u.labels.push_back(1 + static_cast<int>(labels_rng.below(static_cast<std::uint64_t>(spec.vocab_size))));
    }
    const auto fa = static_cast<std::size_t>(spec.frames_per_token_audio);
    const auto fv = static_cast<std::size_t>(spec.frames_per_token_video);
    const auto da = static_cast<std::size_t>(spec.audio_dim);
    const auto dv = static_cast<std::size_t>(spec.video_dim);
    u.audio = Tensor({len * fa, da});
    u.video = Tensor({len * fv, dv});
    for (int k = 0; k < len; ++k) {
      const int tok = u.labels[k];
      for (std::size_t f = 0; f < fa; ++f) {
        const std::size_t row = k * fa + f;
        for (std::size_t c = 0; c < da; ++c) {
          u.audio.at(row, c) = as_f32(protos.audio.at(tok, c) + spec.audio_noise * audio_rng.normal());
        }
      }
      for (std::size_t f = 0; f < fv; ++f) {
        const std::size_t row = k * fv + f;
        for (std::size_t c = 0; c < dv; ++c) {
          u.video.at(row, c) = as_f32(protos.video.at(tok, c) + spec.video_noise * video_rng.normal());
        }
      }
    }
    u.natural_video_mask.assign(len * fv, true);
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

bool utterances_equal(const Utterance& a, const Utterance& b) {
  return a.id == b.id && a.labels == b.labels && bitwise_equal(a.audio, b.audio) && bitwise_equal(a.video, b.video) &&
         a.natural_video_mask == b.natural_video_mask;
}

bool corpora_equal(const Corpus& a, const Corpus& b) {
  if (!(a.spec == b.spec) || a.utterances.size() != b.utterances.size()) return false;
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    if (!utterances_equal(a.utterances[i], b.utterances[i])) return false;
  }
  return true;
}

double audio_only_error_floor(const CorpusSpec& spec) {
  return (2.0 * spec.n_audio_pairs / spec.vocab_size) * 0.5;
}

double video_only_error_floor(const CorpusSpec& spec) {
  return (2.0 * spec.n_video_pairs / spec.vocab_size) * 0.5;
}

}  // namespace mblab
