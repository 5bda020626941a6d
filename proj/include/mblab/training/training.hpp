#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mblab/corpus/dropout.hpp"
#include "mblab/evaluation/evaluation.hpp"
#include "mblab/model/model.hpp"
#include "mblab/objectives/objectives.hpp"

namespace mblab {

enum class RecipeKind { audio_only, teacher, plain_dropout, mda_kd, adapter };
std::string to_string(RecipeKind k);
// Accepts both snake_case and dashed spellings.
RecipeKind parse_recipe_kind(const std::string& s);

struct TrainRecipe {
  RecipeKind kind = RecipeKind::teacher;
  TrainingDropoutPolicy dropout_policy;
  LossWeights weights;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int warmup_steps = 200;
  std::uint64_t seed = 1;
  std::vector<std::string> frozen_scopes;
  FlowFlags flow_flags;
  std::vector<std::string> kd_taps{"fusion_out"};
  double validation_fraction = 0.1;
  // Adapter recipe only: frame-rate perturbation and utterance concatenation.
  bool augment = true;
  DecodeConfig validation_decode{DecodeMode::ctc_greedy, 1, 32, 128};

  // Throws ConfigError (teacher with d_prob > 0, bad ranges, ...).
  void validate() const;
};

// Recipe with the policy and flags each kind uses by default.
TrainRecipe default_recipe(RecipeKind kind);

// Linear warm-up to `base` over `warmup` steps, then base*sqrt(warmup/step).
double learning_rate_at(long step, double base, int warmup);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double ctc = 0.0;
  double att = 0.0;
  double kd = 0.0;
  double total = 0.0;
  double learning_rate = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  std::size_t samples = 0;
  double mean_total = 0.0;
  double mean_kd = 0.0;
  double validation_cer = 0.0;
};

struct TrainLog {
  nlohmann::json recipe;
  std::uint64_t seed = 0;
  double initial_validation_cer = 0.0;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t corpus_train_samples = 0;  // before augmentation
  std::size_t train_samples = 0;         // per epoch, after augmentation
  double wall_seconds = 0.0;  // kept out of the JSON report; the manifest records run time
  // Checksums of the teacher before and after (mda_kd), of the frozen
  // tensors before and after (every recipe).
  std::string teacher_checksum_before, teacher_checksum_after;
  std::string frozen_checksum_before, frozen_checksum_after;
};

std::string train_log_csv(const TrainLog& log);
nlohmann::json train_log_json(const TrainLog& log);
nlohmann::json recipe_to_json(const TrainRecipe& r);

struct DataSplit {
  std::vector<Utterance> train;
  std::vector<Utterance> validation;
};

// Seeded permutation; the first round(fraction*n) utterances validate.
DataSplit split_train_validation(const std::vector<Utterance>& utterances, double fraction, std::uint64_t seed);

// Duplicates (factor > 1) or drops (factor < 1) every k-th audio frame,
// k = round(1/|factor-1|). Video and labels are unchanged.
Utterance perturb_frame_rate(const Utterance& utt, double factor);
Utterance concatenate(const Utterance& a, const Utterance& b, std::uint32_t id);
// One extra sample per utterance, cycling 0.9x, 1.1x and concatenation with
// the next utterance; the result holds twice the input count.
std::vector<Utterance> augment_for_adapters(const std::vector<Utterance>& utterances, int max_len);

// Called after each epoch with the model and that epoch's record.
using EpochCallback = std::function<void(const Model&, const EpochRecord&)>;

// Runs the recipe in place on `model`. The teacher is required for mda_kd
// and is never modified. Throws NumericError (with the step) on a
// non-finite loss, ContractError on teacher/student config mismatch,
// StateError when the adapter recipe lacks adapters.
TrainLog train(Model& model, const std::vector<Utterance>& corpus, const TrainRecipe& recipe,
               const Model* teacher = nullptr, const EpochCallback& on_epoch = {});

// Copy of `parent` prepared for a child recipe: flow flags set and the
// parent's checkpoint id recorded.
Model derive_model(Model& parent, const FlowFlags& flow);

}  // namespace mblab
