#pragma once

#include <map>
#include <string>
#include <vector>

#include "mblab/model/model.hpp"
#include "mblab/numerics/ops.hpp"

namespace mblab {

struct LossWeights {
  double lambda = 0.7;       // CTC share of the multitask loss
  double w_kd = 0.1;         // distillation share of the student loss
  double temperature = 1.0;  // softmax temperature of the distillation term

  void validate() const;  // throws ConfigError
};

// Negative log-likelihood of `labels` under one utterance's CTC posteriors
// [T x C] (log domain, blank 0), by the log-space forward recursion.
// Returns +infinity and clears *feasible when no alignment exists.
double ctc_nll(const Tensor& log_probs, const std::vector<int>& labels, bool* feasible = nullptr);

// Minimum frame count that admits an alignment (repeats need a blank between).
std::size_t ctc_min_frames(const std::vector<int>& labels);

struct CtcResult {
  Var loss;                       // mean NLL over feasible utterances; 0 when none
  std::vector<double> nll;        // per utterance, +inf when infeasible
  std::vector<bool> feasible;
  std::size_t n_feasible = 0;
};

// Batched CTC over a packed [sum(T) x C] log-probability matrix. Infeasible
// utterances are excluded from the mean and flagged.
CtcResult ctc_loss(Var log_probs, const ops::Segments& segments, const std::vector<std::vector<int>>& labels);

// Mean cross-entropy over positions whose target is >= 0. Throws
// ContractError when every position is masked.
Var attention_ce(Var logits, const std::vector<int>& targets);

struct LossParts {
  Var total;
  double ctc = 0.0;
  double att = 0.0;
  double kd = 0.0;
};

// lambda * mean(CTC over tap blocks) + (1 - lambda) * attention CE.
LossParts multitask_loss(const ForwardOutput& out, const std::vector<std::vector<int>>& labels,
                         const LossWeights& weights);

// Teacher taps are fixed tensors (no gradient flows to the teacher).
using TapTensors = std::map<std::string, Tensor>;

// T^2 * mean over tags and frames of KL(softmax(t/T) || softmax(s/T)), with
// the softmax over the feature axis.
Var kd_loss(const TapTensors& teacher, const std::map<std::string, Var>& student, double temperature);

// w_kd * kd_loss + (1 - w_kd) * multitask_loss. With w_kd == 0 or 1 the
// unused term is not evaluated, so the result equals the other term exactly.
LossParts student_loss(const ForwardOutput& student, const TapTensors& teacher_taps,
                       const std::vector<std::string>& tap_tags, const std::vector<std::vector<int>>& labels,
                       const LossWeights& weights);

}  // namespace mblab
