#include "mblab/objectives/objectives.hpp"

#include <cmath>
#include <limits>

#include "mblab/errors.hpp"

namespace mblab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::vector<int> extended(const std::vector<int>& labels) {
  std::vector<int> ext{0};
  for (int y : labels) {
    ext.push_back(y);
    ext.push_back(0);
  }
  return ext;
}

// lp points at a [T x C] row-major block. Fills alpha/beta [T x S] and
// returns log P(labels).
double forward_backward(const double* lp, std::size_t T, std::size_t C, const std::vector<int>& ext,
                        std::vector<double>* alpha_out, std::vector<double>* beta_out) {
  const std::size_t S = ext.size();
  std::vector<double> alpha(T * S, kNegInf);
  auto at = [&](std::vector<double>& m, std::size_t t, std::size_t s) -> double& { return m[t * S + s]; };
  auto emit = [&](std::size_t t, std::size_t s) { return lp[t * C + static_cast<std::size_t>(ext[s])]; };
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2]; };

  at(alpha, 0, 0) = emit(0, 0);
  if (S > 1) at(alpha, 0, 1) = emit(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double v = at(alpha, t - 1, s);
      if (s >= 1) v = lse(v, at(alpha, t - 1, s - 1));
      if (skip_ok(s)) v = lse(v, at(alpha, t - 1, s - 2));
      at(alpha, t, s) = v == kNegInf ? kNegInf : v + emit(t, s);
    }
  }
  double log_p = at(alpha, T - 1, S - 1);
  if (S > 1) log_p = lse(log_p, at(alpha, T - 1, S - 2));

  if (beta_out) {
    std::vector<double> beta(T * S, kNegInf);
    at(beta, T - 1, S - 1) = emit(T - 1, S - 1);
    if (S > 1) at(beta, T - 1, S - 2) = emit(T - 1, S - 2);
    for (std::size_t t = T - 1; t-- > 0;) {
      for (std::size_t s = 0; s < S; ++s) {
        double v = at(beta, t + 1, s);
        if (s + 1 < S) v = lse(v, at(beta, t + 1, s + 1));
        if (s + 2 < S && skip_ok(s + 2)) v = lse(v, at(beta, t + 1, s + 2));
        at(beta, t, s) = v == kNegInf ? kNegInf : v + emit(t, s);
      }
    }
    *beta_out = std::move(beta);
  }
  if (alpha_out) *alpha_out = std::move(alpha);
  return log_p;
}

void check_labels(const std::vector<int>& labels, std::size_t C) {
  for (int y : labels) {
    if (y < 1 || static_cast<std::size_t>(y) >= C) {
      throw ContractError("ctc: label id " + std::to_string(y) + " outside [1, " + std::to_string(C - 1) + "]");
    }
  }
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("loss weights: lambda must be in [0, 1]");
  if (!(w_kd >= 0.0 && w_kd <= 1.0)) throw ConfigError("loss weights: w_kd must be in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("loss weights: temperature must be > 0");
}

std::size_t ctc_min_frames(const std::vector<int>& labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) n += labels[i] == labels[i - 1];
  return n;
}

double ctc_nll(const Tensor& log_probs, const std::vector<int>& labels, bool* feasible) {
  const std::size_t T = log_probs.rows(), C = log_probs.cols();
  check_labels(labels, C);
  const double log_p = forward_backward(log_probs.ptr(), T, C, extended(labels), nullptr, nullptr);
  const bool ok = T >= ctc_min_frames(labels) && log_p != kNegInf;
  if (feasible) *feasible = ok;
  return ok ? -log_p : std::numeric_limits<double>::infinity();
}

CtcResult ctc_loss(Var log_probs, const ops::Segments& segments, const std::vector<std::vector<int>>& labels) {
  const Tensor& lp = log_probs.value();
  const std::size_t C = lp.cols();
  if (segments.total() != lp.rows() || segments.count() != labels.size()) {
    throw DimensionError("ctc_loss: segments " + std::to_string(segments.count()) + "/" +
                         std::to_string(segments.total()) + " vs log_probs " + shape_str(lp.shape()) + " and " +
                         std::to_string(labels.size()) + " label sequences");
  }
  CtcResult res;
  res.nll.assign(labels.size(), std::numeric_limits<double>::infinity());
  res.feasible.assign(labels.size(), false);
  // Gradient of the summed NLL w.r.t. log_probs; scaled by 1/n in backward.
  Tensor grad({lp.rows(), C}, 0.0);
  double total = 0.0;
  for (std::size_t u = 0; u < labels.size(); ++u) {
    check_labels(labels[u], C);
    const std::size_t T = segments.length(u);
    if (T == 0 || T < ctc_min_frames(labels[u])) continue;
    const double* block = lp.ptr() + segments.begin(u) * C;
    const auto ext = extended(labels[u]);
    std::vector<double> alpha, beta;
    const double log_p = forward_backward(block, T, C, ext, &alpha, &beta);
    if (log_p == kNegInf) continue;
    res.feasible[u] = true;
    res.nll[u] = -log_p;
    ++res.n_feasible;
    total += -log_p;
    const std::size_t S = ext.size();
    double* g = grad.ptr() + segments.begin(u) * C;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t s = 0; s < S; ++s) {
        const double a = alpha[t * S + s], b = beta[t * S + s];
        if (a == kNegInf || b == kNegInf) continue;
        const std::size_t k = static_cast<std::size_t>(ext[s]);
        g[t * C + k] -= std::exp(a + b - block[t * C + k] - log_p);
      }
    }
  }
  Tape& tape = *log_probs.tape();
  if (res.n_feasible == 0) {
    res.loss = tape.constant(Tensor::scalar(0.0));
    return res;
  }
  const double inv_n = 1.0 / static_cast<double>(res.n_feasible);
  for (double& v : grad.storage()) v *= inv_n;
  const std::size_t il = log_probs.id();
  auto saved = std::make_shared<Tensor>(std::move(grad));
  res.loss = tape.record("ctc", Tensor::scalar(total * inv_n), {log_probs}, [il, saved](Tape& t, const Tensor& g) {
    Tensor& gl = t.grad_ref(il);
    const double up = g[0];
    for (std::size_t i = 0; i < gl.numel(); ++i) gl[i] += up * (*saved)[i];
  });
  return res;
}

Var attention_ce(Var logits, const std::vector<int>& targets) {
  if (targets.size() != logits.rows()) {
    throw DimensionError("attention_ce: " + std::to_string(targets.size()) + " targets vs logits " +
                         shape_str(logits.shape()));
  }
  std::vector<int> rows, cols;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0) continue;
    if (static_cast<std::size_t>(targets[i]) >= logits.cols()) {
      throw ContractError("attention_ce: target " + std::to_string(targets[i]) + " outside vocabulary");
    }
    rows.push_back(static_cast<int>(i));
    cols.push_back(targets[i]);
  }
  if (rows.empty()) throw ContractError("attention_ce: every position is masked");
  Var logp = ops::log_softmax(logits);
  if (rows.size() != targets.size()) logp = ops::embedding(logp, rows);
  return ops::scale(ops::mean(ops::pick(logp, cols)), -1.0);
}

LossParts multitask_loss(const ForwardOutput& out, const std::vector<std::vector<int>>& labels,
                         const LossWeights& w) {
  w.validate();
  if (out.ctc_logits.empty()) throw ContractError("multitask_loss: no CTC taps in forward output");
  if (!out.decoder_logits.valid()) throw ContractError("multitask_loss: forward ran without targets");
  LossParts parts;
  Var ctc;
  if (w.lambda > 0.0) {
    std::vector<Var> per_tap;
    for (const Var& logits : out.ctc_logits) {
      per_tap.push_back(ctc_loss(ops::log_softmax(logits), out.ctc_segments, labels).loss);
    }
    ctc = per_tap[0];
    for (std::size_t i = 1; i < per_tap.size(); ++i) ctc = ops::add(ctc, per_tap[i]);
    if (per_tap.size() > 1) ctc = ops::scale(ctc, 1.0 / static_cast<double>(per_tap.size()));
    parts.ctc = ctc.value()[0];
  }
  Var att;
  if (w.lambda < 1.0) {
    att = attention_ce(out.decoder_logits, out.decoder_targets);
    parts.att = att.value()[0];
  }
  if (w.lambda == 1.0) {
    parts.total = ctc;
  } else if (w.lambda == 0.0) {
    parts.total = att;
  } else {
    parts.total = ops::add(ops::scale(ctc, w.lambda), ops::scale(att, 1.0 - w.lambda));
  }
  return parts;
}

Var kd_loss(const TapTensors& teacher, const std::map<std::string, Var>& student, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("kd_loss: temperature must be > 0");
  if (teacher.empty() || teacher.size() != student.size()) throw ContractError("kd_loss: tap tag sets differ");
  Var total;
  for (const auto& [tag, tv] : teacher) {
    const auto it = student.find(tag);
    if (it == student.end()) throw ContractError("kd_loss: student lacks tap '" + tag + "'");
    const Var s = it->second;
    if (s.shape() != tv.shape()) {
      throw ContractError("kd_loss: tap '" + tag + "' teacher " + shape_str(tv.shape()) + " vs student " +
                          shape_str(s.shape()));
    }
    Tape& tape = *s.tape();
    const std::size_t rows = tv.rows(), cols = tv.cols();
    // Teacher distribution and its mean negative entropy, as constants.
    Tensor p({rows, cols});
    double neg_entropy = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = tv.ptr() + r * cols;
      double* pr = p.ptr() + r * cols;
      double mx = in[0] / temperature;
      for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c] / temperature);
      double z = 0.0;
      for (std::size_t c = 0; c < cols; ++c) z += (pr[c] = std::exp(in[c] / temperature - mx));
      const double log_z = std::log(z);
      for (std::size_t c = 0; c < cols; ++c) {
        const double logp = in[c] / temperature - mx - log_z;
        pr[c] /= z;
        if (pr[c] > 0.0) neg_entropy += pr[c] * logp;
      }
    }
    neg_entropy /= static_cast<double>(rows);
    Var log_q = ops::log_softmax(ops::scale(s, 1.0 / temperature));
    Var cross = ops::mean(ops::row_sum(ops::mul(tape.constant(std::move(p)), log_q)));
    Var kl = ops::sub(tape.constant(Tensor::scalar(neg_entropy)), cross);
    total = total.valid() ? ops::add(total, kl) : kl;
  }
  return ops::scale(total, temperature * temperature / static_cast<double>(teacher.size()));
}

LossParts student_loss(const ForwardOutput& student, const TapTensors& teacher_taps,
                       const std::vector<std::string>& tap_tags, const std::vector<std::vector<int>>& labels,
                       const LossWeights& w) {
  w.validate();
  LossParts parts;
  Var kd;
  if (w.w_kd > 0.0) {
    std::map<std::string, Var> s;
    TapTensors t;
    for (const auto& tag : tap_tags) {
      const auto si = student.taps.find(tag);
      const auto ti = teacher_taps.find(tag);
      if (si == student.taps.end() || ti == teacher_taps.end()) {
        throw ContractError("student_loss: tap '" + tag + "' missing on teacher or student side");
      }
      s[tag] = si->second.value;
      t[tag] = ti->second;
    }
    kd = kd_loss(t, s, w.temperature);
    parts.kd = kd.value()[0];
  }
  if (w.w_kd == 1.0) {
    parts.total = kd;
    return parts;
  }
  LossParts mt = multitask_loss(student, labels, w);
  parts.ctc = mt.ctc;
  parts.att = mt.att;
  parts.total = w.w_kd == 0.0 ? mt.total : ops::add(ops::scale(kd, w.w_kd), ops::scale(mt.total, 1.0 - w.w_kd));
  return parts;
}

}  // namespace mblab
