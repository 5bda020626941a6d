#include "mblab/corpus/dropout.hpp"

#include <algorithm>
#include <cmath>

#include "mblab/corpus/rng.hpp"
#include "mblab/errors.hpp"

namespace mblab {

std::string to_string(DropoutMethod m) {
  switch (m) {
    case DropoutMethod::none: return "none";
    case DropoutMethod::segment: return "segment";
    case DropoutMethod::utterance: return "utterance";
    case DropoutMethod::interval: return "interval";
    case DropoutMethod::per_frame: return "per_frame";
    case DropoutMethod::av_utterance: return "av_utterance";
  }
  return "none";
}

std::string to_string(Modality m) { return m == Modality::video ? "video" : "audio"; }

DropoutMethod parse_dropout_method(const std::string& name) {
  for (auto m : {DropoutMethod::none, DropoutMethod::segment, DropoutMethod::utterance, DropoutMethod::interval,
                 DropoutMethod::per_frame, DropoutMethod::av_utterance}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown dropout method '" + name + "'");
}

Modality parse_modality(const std::string& name) {
  if (name == "video") return Modality::video;
  if (name == "audio") return Modality::audio;
  throw ConfigError("unknown modality '" + name + "'");
}

namespace {

void check_rate(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("dropout rate must be in [0, 1], got " + std::to_string(rate));
}

Tensor& stream_of(Utterance& u, Modality m) { return m == Modality::video ? u.video : u.audio; }

void zero_frame(Utterance& u, Modality m, std::size_t row) {
  Tensor& s = stream_of(u, m);
  std::fill_n(s.ptr() + row * s.cols(), s.cols(), 0.0);
  if (m == Modality::video && row < u.natural_video_mask.size()) u.natural_video_mask[row] = false;
}

void zero_stream(Utterance& u, Modality m) {
  const std::size_t t = stream_of(u, m).rows();
  for (std::size_t r = 0; r < t; ++r) zero_frame(u, m, r);
}

}  // namespace

void DropoutSpec::validate() const { check_rate(rate); }

std::size_t segment_length(std::size_t t, double rate) {
  check_rate(rate);
  return std::min(t, static_cast<std::size_t>(std::lround(rate * static_cast<double>(t))));
}

Utterance apply_segment_dropout_at(const Utterance& utt, double rate, std::size_t start, Modality target) {
  Utterance out = utt;
  const std::size_t t = stream_of(out, target).rows();
  const std::size_t len = segment_length(t, rate);
  if (len == 0) return out;
  start = std::min(start, t - len);
  for (std::size_t r = start; r < start + len; ++r) zero_frame(out, target, r);
  return out;
}

Utterance apply_segment_dropout(const Utterance& utt, double rate, std::uint64_t start_seed, Modality target) {
  const std::size_t t = target == Modality::video ? utt.video.rows() : utt.audio.rows();
  const std::size_t len = segment_length(t, rate);
  CounterRng rng(start_seed, utt.id, "dropout.segment");
  const std::size_t start = static_cast<std::size_t>(rng.below(t - len + 1));
  return apply_segment_dropout_at(utt, rate, start, target);
}

Utterance apply_utterance_dropout(const Utterance& utt, double rate, std::uint64_t coin_seed, Modality target) {
  check_rate(rate);
  Utterance out = utt;
  CounterRng rng(coin_seed, utt.id, "dropout.utterance");
  if (rng.bernoulli(rate)) zero_stream(out, target);
  return out;
}

std::vector<std::size_t> interval_dropped_frames(std::size_t t, double rate) {
  check_rate(rate);
  std::vector<std::size_t> dropped;
  if (rate == 0.0) return dropped;
  if (rate == 1.0) {
    for (std::size_t i = 0; i < t; ++i) dropped.push_back(i);
    return dropped;
  }
  if (rate <= 0.5) {
    const auto k = static_cast<std::size_t>(std::lround(1.0 / rate));
    for (std::size_t i = 0; i < t; ++i) {
      if ((i + 1) % k == 0) dropped.push_back(i);
    }
  } else {
    const auto k = static_cast<std::size_t>(std::lround(1.0 / (1.0 - rate)));
    for (std::size_t i = 0; i < t; ++i) {
      if ((i + 1) % k != 0) dropped.push_back(i);
    }
  }
  return dropped;
}

Utterance apply_interval_dropout(const Utterance& utt, double rate, Modality target) {
  Utterance out = utt;
  for (std::size_t r : interval_dropped_frames(stream_of(out, target).rows(), rate)) zero_frame(out, target, r);
  return out;
}

Utterance apply_per_frame_dropout(const Utterance& utt, double rate, std::uint64_t seed, Modality target) {
  check_rate(rate);
  Utterance out = utt;
  CounterRng rng(seed, utt.id, "dropout.per_frame");
  const std::size_t t = stream_of(out, target).rows();
  for (std::size_t r = 0; r < t; ++r) {
    if (rng.bernoulli(rate)) zero_frame(out, target, r);
  }
  return out;
}

Utterance apply_av_utterance_dropout(const Utterance& utt, double rate, std::uint64_t seed) {
  check_rate(rate);
  Utterance out = utt;
  CounterRng rng(seed, utt.id, "dropout.av_utterance");
  if (rng.bernoulli(rate)) zero_stream(out, rng.bernoulli(0.5) ? Modality::video : Modality::audio);
  return out;
}

Utterance apply_dropout(const Utterance& utt, const DropoutSpec& spec) {
  spec.validate();
  switch (spec.method) {
    case DropoutMethod::none: return utt;
    case DropoutMethod::segment: return apply_segment_dropout(utt, spec.rate, spec.seed, spec.target);
    case DropoutMethod::utterance: return apply_utterance_dropout(utt, spec.rate, spec.seed, spec.target);
    case DropoutMethod::interval: return apply_interval_dropout(utt, spec.rate, spec.target);
    case DropoutMethod::per_frame: return apply_per_frame_dropout(utt, spec.rate, spec.seed, spec.target);
    case DropoutMethod::av_utterance: return apply_av_utterance_dropout(utt, spec.rate, spec.seed);
  }
  return utt;
}

void TrainingDropoutPolicy::validate() const {
  if (!(d_prob >= 0.0 && d_prob <= 1.0)) throw ConfigError("dropout policy: d_prob must be in [0, 1]");
  check_rate(rate);
  if (d_prob > 0.0 && method_pool.empty()) throw ConfigError("dropout policy: method pool is empty but d_prob > 0");
}

std::vector<Utterance> apply_training_policy(const std::vector<Utterance>& batch, const TrainingDropoutPolicy& policy,
                                             std::uint64_t seed, std::vector<DropoutMethod>* applied) {
  policy.validate();
  std::vector<Utterance> out;
  out.reserve(batch.size());
  if (applied) applied->assign(batch.size(), DropoutMethod::none);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CounterRng rng(seed, i, "policy.select");
    if (!rng.bernoulli(policy.d_prob)) {
      out.push_back(batch[i]);
      continue;
    }
    const DropoutMethod m = policy.method_pool[rng.below(policy.method_pool.size())];
    if (applied) (*applied)[i] = m;
    out.push_back(apply_dropout(batch[i], DropoutSpec{m, policy.rate, Modality::video, derive_key({seed, i})}));
  }
  return out;
}

std::size_t count_zero_frames(const Tensor& stream) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < stream.rows(); ++r) {
    const double* row = stream.ptr() + r * stream.cols();
    if (std::all_of(row, row + stream.cols(), [](double v) { return v == 0.0; })) ++n;
  }
  return n;
}

bool stream_is_zero(const Tensor& stream) { return count_zero_frames(stream) == stream.rows(); }

}  // namespace mblab
