#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mblab/corpus/corpus.hpp"

namespace mblab {

enum class DropoutMethod { none, segment, utterance, interval, per_frame, av_utterance };
enum class Modality { video, audio };

std::string to_string(DropoutMethod m);
std::string to_string(Modality m);
// Throws ConfigError on unknown names.
DropoutMethod parse_dropout_method(const std::string& name);
Modality parse_modality(const std::string& name);

struct DropoutSpec {
  DropoutMethod method = DropoutMethod::none;
  double rate = 0.0;
  Modality target = Modality::video;  // ignored by av_utterance
  std::uint64_t seed = 0;

  void validate() const;
};

// All ops zero-fill: a dropped frame becomes the all-zeros vector. Random
// choices come from the stream keyed by (seed, utterance id, method tag).
// Dropped video frames are also cleared in natural_video_mask.

// round(rate*T) contiguous frames starting at a uniformly drawn valid index.
Utterance apply_segment_dropout(const Utterance& utt, double rate, std::uint64_t start_seed,
                                Modality target = Modality::video);
// Same span length, explicit start (clamped so the span fits).
Utterance apply_segment_dropout_at(const Utterance& utt, double rate, std::size_t start,
                                   Modality target = Modality::video);
// With probability `rate` the whole stream is zeroed.
Utterance apply_utterance_dropout(const Utterance& utt, double rate, std::uint64_t coin_seed,
                                  Modality target = Modality::video);
// Deterministic fixed-interval pattern. rate <= 0.5: k = round(1/rate), zero
// frames with (i+1) % k == 0. rate > 0.5: k = round(1/(1-rate)), keep only
// those frames.
Utterance apply_interval_dropout(const Utterance& utt, double rate, Modality target = Modality::video);
// Independent Bernoulli(rate) per frame.
Utterance apply_per_frame_dropout(const Utterance& utt, double rate, std::uint64_t seed,
                                  Modality target = Modality::video);
// With probability `rate` one whole stream, chosen by a fair coin, is zeroed.
Utterance apply_av_utterance_dropout(const Utterance& utt, double rate, std::uint64_t seed);

Utterance apply_dropout(const Utterance& utt, const DropoutSpec& spec);

// Frame indices zeroed by interval dropout for a stream of length t.
std::vector<std::size_t> interval_dropped_frames(std::size_t t, double rate);
std::size_t segment_length(std::size_t t, double rate);

struct TrainingDropoutPolicy {
  double d_prob = 0.0;
  std::vector<DropoutMethod> method_pool;
  double rate = 0.0;

  // Throws ConfigError.
  void validate() const;
};

// Per sample i: with probability d_prob pick a pool method uniformly and
// apply it at the policy rate. Randomness is keyed by (seed, i). If
// `applied` is given it receives the chosen method per sample (none when
// the sample was not selected).
std::vector<Utterance> apply_training_policy(const std::vector<Utterance>& batch, const TrainingDropoutPolicy& policy,
                                             std::uint64_t seed, std::vector<DropoutMethod>* applied = nullptr);

bool stream_is_zero(const Tensor& stream);
std::size_t count_zero_frames(const Tensor& stream);

}  // namespace mblab
