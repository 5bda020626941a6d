#include "mblab/training/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "mblab/corpus/rng.hpp"
#include "mblab/errors.hpp"
#include "mblab/numerics/adam.hpp"
#include "mblab/util/bytes.hpp"

namespace mblab {

std::string to_string(RecipeKind k) {
  switch (k) {
    case RecipeKind::audio_only: return "audio_only";
    case RecipeKind::teacher: return "teacher";
    case RecipeKind::plain_dropout: return "plain_dropout";
    case RecipeKind::mda_kd: return "mda_kd";
    case RecipeKind::adapter: return "adapter";
  }
  return "?";
}

RecipeKind parse_recipe_kind(const std::string& raw) {
  std::string s = raw;
  std::replace(s.begin(), s.end(), '-', '_');
  for (RecipeKind k : {RecipeKind::audio_only, RecipeKind::teacher, RecipeKind::plain_dropout, RecipeKind::mda_kd,
                       RecipeKind::adapter})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown recipe '" + raw + "'");
}

void TrainRecipe::validate() const {
  dropout_policy.validate();
  weights.validate();
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (warmup_steps < 0) throw ConfigError("train.warmup_steps must be >= 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("train.validation_fraction must be in [0, 1)");
  validation_decode.validate();
  if ((kind == RecipeKind::teacher || kind == RecipeKind::audio_only) && dropout_policy.d_prob != 0.0)
    throw ConfigError(to_string(kind) + " recipe trains on complete pairs only (d_prob must be 0)");
  if (kind == RecipeKind::audio_only && flow_flags.video_enabled)
    throw ConfigError("audio_only recipe requires the video path disabled");
  if (kind == RecipeKind::mda_kd) {
    if (kd_taps.empty()) throw ConfigError("mda_kd recipe needs at least one KD tap");
    for (const auto& t : kd_taps)
      if (std::find(tap_tags().begin(), tap_tags().end(), t) == tap_tags().end())
        throw ConfigError("unknown KD tap '" + t + "'");
  }
}

TrainRecipe default_recipe(RecipeKind kind) {
  TrainRecipe r;
  r.kind = kind;
  const std::vector<DropoutMethod> pool{DropoutMethod::segment, DropoutMethod::utterance, DropoutMethod::interval,
                                       DropoutMethod::per_frame};
  switch (kind) {
    case RecipeKind::audio_only:
      r.flow_flags.video_enabled = false;
      break;
    case RecipeKind::teacher:
    case RecipeKind::adapter:
      break;
    case RecipeKind::plain_dropout:
    case RecipeKind::mda_kd:
      r.dropout_policy = TrainingDropoutPolicy{1.0, pool, 0.7};
      break;
  }
  return r;
}

double learning_rate_at(long step, double base, int warmup) {
  if (step < 1) step = 1;
  if (warmup <= 0) return base;
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return step <= warmup ? base * s / w : base * std::sqrt(w / s);
}

nlohmann::json recipe_to_json(const TrainRecipe& r) {
  std::vector<std::string> pool;
  for (auto m : r.dropout_policy.method_pool) pool.push_back(to_string(m));
  return {{"kind", to_string(r.kind)},
          {"dropout_policy", {{"d_prob", r.dropout_policy.d_prob}, {"method_pool", pool}, {"rate", r.dropout_policy.rate}}},
          {"weights", {{"lambda", r.weights.lambda}, {"w_kd", r.weights.w_kd}, {"temperature", r.weights.temperature}}},
          {"epochs", r.epochs},
          {"batch_size", r.batch_size},
          {"learning_rate", r.learning_rate},
          {"warmup_steps", r.warmup_steps},
          {"seed", r.seed},
          {"frozen_scopes", r.frozen_scopes},
          {"flow_flags", {{"video_enabled", r.flow_flags.video_enabled}, {"audio_to_video", r.flow_flags.audio_to_video}}},
          {"kd_taps", r.kd_taps},
          {"validation_fraction", r.validation_fraction},
          {"augment", r.augment},
          {"validation_decode", to_string(r.validation_decode.mode)}};
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream os;
  os << std::setprecision(10) << "step,ctc,att,kd,total\n";
  for (const auto& s : log.steps) os << s.step << ',' << s.ctc << ',' << s.att << ',' << s.kd << ',' << s.total << '\n';
  return os.str();
}

nlohmann::json train_log_json(const TrainLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"samples", e.samples},
                      {"mean_total", e.mean_total},
                      {"mean_kd", e.mean_kd},
                      {"validation_cer", e.validation_cer}});
  nlohmann::json j{{"recipe", log.recipe},
                   {"seed", log.seed},
                   {"steps", log.steps.size()},
                   {"initial_validation_cer", log.initial_validation_cer},
                   {"epochs", epochs},
                   {"corpus_train_samples", log.corpus_train_samples},
                   {"train_samples", log.train_samples},
                   {"frozen_checksum_before", log.frozen_checksum_before},
                   {"frozen_checksum_after", log.frozen_checksum_after}};
  if (!log.teacher_checksum_before.empty()) {
    j["teacher_checksum_before"] = log.teacher_checksum_before;
    j["teacher_checksum_after"] = log.teacher_checksum_after;
  }
  return j;
}

namespace {

template <class T>
void shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

DataSplit split_train_validation(const std::vector<Utterance>& utterances, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng rng(seed, 0, "train.split");
  shuffle(order, rng);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(utterances.size())));
  DataSplit s;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? s.validation : s.train).push_back(utterances[order[i]]);
  // Validation keeps corpus order so decoding batches are stable.
  std::sort(s.validation.begin(), s.validation.end(), [](const Utterance& a, const Utterance& b) { return a.id < b.id; });
  return s;
}

Utterance perturb_frame_rate(const Utterance& utt, double factor) {
  if (!(factor > 0.0) || factor == 1.0) throw ContractError("perturb_frame_rate: factor must be positive and != 1");
  const auto k = static_cast<std::size_t>(std::llround(1.0 / std::abs(factor - 1.0)));
  if (k < 2) throw ContractError("perturb_frame_rate: factor too far from 1");
  const std::size_t t = utt.audio.rows(), d = utt.audio.cols();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < t; ++i) {
    const bool hit = (i + 1) % k == 0;
    if (factor < 1.0 && hit) continue;
    rows.push_back(i);
    if (factor > 1.0 && hit) rows.push_back(i);
  }
  Utterance out = utt;
  out.audio = Tensor({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) out.audio.at(r, j) = utt.audio.at(rows[r], j);
  return out;
}

namespace {

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows() + b.rows(), a.cols()});
  std::copy(a.storage().begin(), a.storage().end(), out.storage().begin());
  std::copy(b.storage().begin(), b.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(a.numel()));
  return out;
}

}  // namespace

Utterance concatenate(const Utterance& a, const Utterance& b, std::uint32_t id) {
  if (a.audio.cols() != b.audio.cols() || a.video.cols() != b.video.cols())
    throw ContractError("concatenate: feature widths differ");
  Utterance out;
  out.id = id;
  out.audio = stack_rows(a.audio, b.audio);
  out.video = stack_rows(a.video, b.video);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.natural_video_mask = a.natural_video_mask;
  out.natural_video_mask.insert(out.natural_video_mask.end(), b.natural_video_mask.begin(), b.natural_video_mask.end());
  return out;
}

std::vector<Utterance> augment_for_adapters(const std::vector<Utterance>& utterances, int max_len) {
  std::vector<Utterance> out = utterances;
  const std::size_t n = utterances.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t id = 0x80000000u | static_cast<std::uint32_t>(i);
    Utterance extra;
    switch (i % 3) {
      case 0: extra = perturb_frame_rate(utterances[i], 0.9); break;
      case 1: extra = perturb_frame_rate(utterances[i], 1.1); break;
      default: {
        const Utterance& next = utterances[(i + 1) % n];
        const bool fits = static_cast<int>(utterances[i].audio.rows() + next.audio.rows()) <= max_len &&
                          static_cast<int>(utterances[i].labels.size() + next.labels.size()) + 1 <= max_len;
        extra = fits ? concatenate(utterances[i], next, id) : perturb_frame_rate(utterances[i], 0.9);
      }
    }
    extra.id = id;
    out.push_back(std::move(extra));
  }
  return out;
}

Model derive_model(Model& parent, const FlowFlags& flow) {
  Model child = parent;
  child.flow = flow;
  child.provenance.parent = checkpoint_id(parent);
  return child;
}

namespace {

std::function<bool(const std::string&)> in_scopes(const std::vector<std::string>& scopes) {
  return [scopes](const std::string& name) {
    for (const auto& s : scopes)
      if (starts_with(name, s)) return true;
    return false;
  };
}

double validation_cer(Model& model, const std::vector<Utterance>& val, const TrainRecipe& r) {
  if (val.empty()) return 0.0;
  const InputMode mode = r.kind == RecipeKind::adapter ? InputMode::audio_only : InputMode::complete;
  const auto hyps = decode(model, val, r.validation_decode, mode);
  std::vector<std::vector<int>> refs, hs;
  for (std::size_t i = 0; i < val.size(); ++i) {
    refs.push_back(val[i].labels);
    hs.push_back(hyps[i].tokens);
  }
  return corpus_cer(refs, hs);
}

}  // namespace

TrainLog train(Model& model, const std::vector<Utterance>& corpus, const TrainRecipe& recipe, const Model* teacher,
               const EpochCallback& on_epoch) {
  recipe.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log;
  log.recipe = recipe_to_json(recipe);
  log.seed = recipe.seed;

  Model teacher_copy;
  if (recipe.kind == RecipeKind::mda_kd) {
    if (!teacher) throw ConfigError("mda_kd recipe needs a teacher");
    if (!(teacher->config == model.config)) throw ContractError("teacher and student configs differ");
    teacher_copy = *teacher;
    teacher_copy.adapter_active = false;
    log.teacher_checksum_before = hex64(teacher->params.checksum());
  }
  if (recipe.kind == RecipeKind::adapter) {
    if (!model.adapters) throw StateError("adapter recipe needs a model with adapters attached");
    set_adapter_active(model, true);
  } else {
    model.flow = recipe.flow_flags;
    if (model.adapters) model.adapter_active = false;
  }

  // Frozen set: requested scopes, plus every base tensor for adapters.
  std::map<std::string, bool> frozen_before;
  for (auto& [name, p] : model.params.items()) frozen_before[name] = p.frozen;
  const auto scoped = in_scopes(recipe.frozen_scopes);
  model.params.set_frozen(scoped, true);
  if (recipe.kind == RecipeKind::adapter)
    model.params.set_frozen([](const std::string& n) { return !is_adapter_tensor(n); }, true);
  auto frozen_pred = [&model](const std::string& n) { return model.params.get(n).frozen; };
  log.frozen_checksum_before = hex64(model.params.checksum(frozen_pred));

  DataSplit split = split_train_validation(corpus, recipe.validation_fraction, derive_key({recipe.seed, tag_hash("split")}));
  log.corpus_train_samples = split.train.size();
  if (recipe.kind == RecipeKind::adapter && recipe.augment)
    split.train = augment_for_adapters(split.train, model.config.max_len);
  log.train_samples = split.train.size();
  log.initial_validation_cer = validation_cer(model, split.validation, recipe);

  AdamState adam;
  adam.config.learning_rate = recipe.learning_rate;
  const bool use_policy = recipe.kind == RecipeKind::plain_dropout || recipe.kind == RecipeKind::mda_kd;
  const std::size_t bs = static_cast<std::size_t>(recipe.batch_size);
  long step = 0;
  for (int epoch = 1; epoch <= recipe.epochs; ++epoch) {
    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng(recipe.seed, static_cast<std::uint64_t>(epoch), "train.shuffle");
    shuffle(order, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.samples = order.size();
    std::size_t n_steps = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      ++step;
      std::vector<Utterance> clean;
      for (std::size_t i = lo; i < std::min(order.size(), lo + bs); ++i) clean.push_back(split.train[order[i]]);
      const std::vector<Utterance> input =
          use_policy ? apply_training_policy(clean, recipe.dropout_policy, derive_key({recipe.seed, tag_hash("policy"),
                                                                                        static_cast<std::uint64_t>(step)}))
                     : clean;
      StepRecord sr;
      sr.step = step;
      sr.epoch = epoch;
      sr.learning_rate = learning_rate_at(step, recipe.learning_rate, recipe.warmup_steps);
      try {
        TapTensors teacher_taps;
        if (recipe.kind == RecipeKind::mda_kd && recipe.weights.w_kd > 0.0) {
          Tape tt;
          tt.set_grad_enabled(false);
          const ForwardOutput tout = forward_full(teacher_copy, tt, make_batch(clean), false);
          for (const auto& tag : recipe.kd_taps) {
            const auto it = tout.taps.find(tag);
            if (it == tout.taps.end()) throw ContractError("teacher does not produce tap '" + tag + "'");
            teacher_taps[tag] = it->second.value.value();
          }
        }
        Tape tape;
        const Batch batch = make_batch(input);
        const ForwardOutput out = forward(model, tape, batch, true);
        const LossParts parts = recipe.kind == RecipeKind::mda_kd
                                    ? student_loss(out, teacher_taps, recipe.kd_taps, batch.labels, recipe.weights)
                                    : multitask_loss(out, batch.labels, recipe.weights);
        sr.ctc = parts.ctc;
        sr.att = parts.att;
        sr.kd = parts.kd;
        sr.total = parts.total.value()[0];
        if (!std::isfinite(sr.total)) throw NumericError("non-finite training loss", step);
        model.params.zero_grad();
        tape.backward(parts.total);
        adam_step(model.params, adam, sr.learning_rate);
      } catch (const NumericError& e) {
        if (e.step() >= 0) throw;
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(step), step);
      }
      rec.mean_total += sr.total;
      rec.mean_kd += sr.kd;
      ++n_steps;
      log.steps.push_back(sr);
    }
    if (n_steps > 0) {
      rec.mean_total /= static_cast<double>(n_steps);
      rec.mean_kd /= static_cast<double>(n_steps);
    }
    rec.validation_cer = validation_cer(model, split.validation, recipe);
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(model, rec);
  }

  log.frozen_checksum_after = hex64(model.params.checksum(frozen_pred));
  if (log.frozen_checksum_after != log.frozen_checksum_before)
    throw StateError("frozen tensors changed during training");
  for (auto& [name, p] : model.params.items()) {
    const auto it = frozen_before.find(name);
    if (it != frozen_before.end() && recipe.kind != RecipeKind::adapter) p.frozen = it->second;
  }
  model.params.zero_grad();
  model.params.round_to_f32();
  model.provenance.recipe = to_string(recipe.kind);
  model.provenance.seed = recipe.seed;
  if (teacher) {
    log.teacher_checksum_after = hex64(teacher->params.checksum());
    if (recipe.kind == RecipeKind::mda_kd && log.teacher_checksum_after != log.teacher_checksum_before)
      throw StateError("teacher parameters changed during student training");
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace mblab
