#include "mblab/evaluation/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "mblab/corpus/rng.hpp"
#include "mblab/errors.hpp"

namespace mblab {

std::string to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::attention_greedy: return "attention_greedy";
    case DecodeMode::attention_beam: return "attention_beam";
    case DecodeMode::ctc_greedy: return "ctc_greedy";
  }
  return "?";
}

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "attention_greedy") return DecodeMode::attention_greedy;
  if (s == "attention_beam") return DecodeMode::attention_beam;
  if (s == "ctc_greedy") return DecodeMode::ctc_greedy;
  throw ConfigError("unknown decode mode '" + s + "'");
}

void DecodeConfig::validate() const {
  if (beam_width < 1) throw ConfigError("decode.beam_width must be >= 1");
  if (max_decode_len < 1) throw ConfigError("decode.max_decode_len must be >= 1");
  if (batch_size < 1) throw ConfigError("decode.batch_size must be >= 1");
}

std::string to_string(InputMode m) { return m == InputMode::complete ? "complete" : "audio_only"; }

InputMode parse_input_mode(const std::string& s) {
  if (s == "complete") return InputMode::complete;
  if (s == "audio_only") return InputMode::audio_only;
  throw ConfigError("unknown input mode '" + s + "'");
}

namespace {

ForwardOutput encode(Model& model, Tape& tape, const Batch& batch, InputMode mode) {
  if (mode == InputMode::audio_only) return forward_audio_only(model, tape, batch, false);
  return forward_full(model, tape, batch, false);
}

// Row-wise log-softmax of a logits matrix.
Tensor log_softmax_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.rows(), c = x.cols();
  for (std::size_t r = 0; r < n; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) m = std::max(m, x.at(r, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x.at(r, j) - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = x.at(r, j) - lse;
  }
  return out;
}

struct Beam {
  std::vector<int> prefix;  // starts with the start symbol
  double log_prob = 0.0;
};

Hypothesis finish(const std::vector<int>& prefix, double log_prob, bool truncated) {
  Hypothesis h;
  h.tokens.assign(prefix.begin() + 1, prefix.end());
  h.log_prob = log_prob;
  const std::size_t emitted = h.tokens.size() + (truncated ? 0 : 1);
  h.score = log_prob / static_cast<double>(std::max<std::size_t>(emitted, 1));
  h.truncated = truncated;
  return h;
}

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.truncated != b.truncated) return !a.truncated;
  return a.score > b.score;
}

std::vector<Hypothesis> greedy(Model& model, Tape& tape, const ForwardOutput& enc, std::size_t n,
                               const DecodeConfig& cfg, bool audio_path) {
  const int eos = model.config.sos_eos();
  std::vector<Beam> beams(n, Beam{{eos}, 0.0});
  std::vector<Hypothesis> out(n);
  std::vector<bool> done(n, false);
  for (int step = 0; step < cfg.max_decode_len; ++step) {
    std::vector<std::vector<int>> prefixes;
    std::vector<std::size_t> owner;
    for (std::size_t i = 0; i < n; ++i)
      if (!done[i]) {
        prefixes.push_back(beams[i].prefix);
        owner.push_back(i);
      }
    if (prefixes.empty()) break;
    const Tensor lp = log_softmax_rows(decoder_next_logits(model, tape, enc, prefixes, owner, audio_path).value());
    for (std::size_t r = 0; r < owner.size(); ++r) {
      const std::size_t i = owner[r];
      int best = 1;
      for (int k = 2; k < static_cast<int>(lp.cols()); ++k)
        if (lp.at(r, static_cast<std::size_t>(k)) > lp.at(r, static_cast<std::size_t>(best))) best = k;
      beams[i].log_prob += lp.at(r, static_cast<std::size_t>(best));
      if (best == eos) {
        out[i] = finish(beams[i].prefix, beams[i].log_prob, false);
        done[i] = true;
      } else {
        beams[i].prefix.push_back(best);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!done[i]) out[i] = finish(beams[i].prefix, beams[i].log_prob, true);
  return out;
}

// Length-normalised beam search. Alive beams are ranked by raw log-prob;
// finished hypotheses by mean log-prob per emitted symbol. The greedy
// hypothesis is always a candidate, so the result never scores below it.
std::vector<Hypothesis> beam_search(Model& model, Tape& tape, const ForwardOutput& enc, std::size_t n,
                                    const DecodeConfig& cfg, bool audio_path) {
  std::vector<Hypothesis> best = greedy(model, tape, enc, n, cfg, audio_path);
  if (cfg.beam_width == 1) return best;
  const int eos = model.config.sos_eos();
  const std::size_t width = static_cast<std::size_t>(cfg.beam_width);
  std::vector<std::vector<Beam>> alive(n, std::vector<Beam>{Beam{{eos}, 0.0}});
  for (int step = 0; step < cfg.max_decode_len; ++step) {
    std::vector<std::vector<int>> prefixes;
    std::vector<std::size_t> owner, slot;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t b = 0; b < alive[i].size(); ++b) {
        prefixes.push_back(alive[i][b].prefix);
        owner.push_back(i);
        slot.push_back(b);
      }
    if (prefixes.empty()) break;
    const Tensor lp = log_softmax_rows(decoder_next_logits(model, tape, enc, prefixes, owner, audio_path).value());
    std::vector<std::vector<Beam>> next(n);
    for (std::size_t r = 0; r < prefixes.size(); ++r) {
      const std::size_t i = owner[r];
      const Beam& parent = alive[i][slot[r]];
      for (int k = 1; k < static_cast<int>(lp.cols()); ++k) {
        const double s = parent.log_prob + lp.at(r, static_cast<std::size_t>(k));
        if (k == eos) {
          Hypothesis h = finish(parent.prefix, s, false);
          if (better(h, best[i])) best[i] = std::move(h);
          continue;
        }
        Beam c{parent.prefix, s};
        c.prefix.push_back(k);
        next[i].push_back(std::move(c));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& cand = next[i];
      const std::size_t keep = std::min(width, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                        [](const Beam& a, const Beam& b) { return a.log_prob > b.log_prob; });
      cand.resize(keep);
      // Log-probs only fall, so no continuation can score above its running
      // total spread over the longest allowed output.
      if (!best[i].truncated && !cand.empty() &&
          cand.front().log_prob / static_cast<double>(cfg.max_decode_len + 1) < best[i].score)
        cand.clear();
      alive[i] = std::move(cand);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (const Beam& b : alive[i]) {
      Hypothesis h = finish(b.prefix, b.log_prob, true);
      if (better(h, best[i])) best[i] = std::move(h);
    }
  return best;
}

}  // namespace

std::vector<int> ctc_greedy_collapse(const Tensor& logits) {
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    int k = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits.at(t, j) > logits.at(t, static_cast<std::size_t>(k))) k = static_cast<int>(j);
    if (k != prev && k != 0) out.push_back(k);
    prev = k;
  }
  return out;
}

std::vector<Hypothesis> decode(Model& model, const std::vector<Utterance>& utterances, const DecodeConfig& requested,
                               InputMode mode) {
  requested.validate();
  // Prefixes (start symbol plus emitted tokens) must fit the decoder.
  DecodeConfig config = requested;
  config.max_decode_len = std::min(config.max_decode_len, model.config.max_len - 1);
  if (mode == InputMode::audio_only && !model.adapters) throw StateError("audio-only decoding needs adapters");
  std::vector<Hypothesis> out;
  out.reserve(utterances.size());
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (std::size_t lo = 0; lo < utterances.size(); lo += bs) {
    const std::size_t hi = std::min(utterances.size(), lo + bs);
    std::vector<Utterance> chunk(utterances.begin() + static_cast<std::ptrdiff_t>(lo),
                                 utterances.begin() + static_cast<std::ptrdiff_t>(hi));
    Tape tape;
    tape.set_grad_enabled(false);
    const Batch batch = make_batch(chunk);
    const ForwardOutput enc = encode(model, tape, batch, mode);
    const bool audio_path = mode == InputMode::audio_only;
    std::vector<Hypothesis> part;
    switch (config.mode) {
      case DecodeMode::ctc_greedy: {
        const Tensor lp = log_softmax_rows(enc.ctc_logits.back().value());
        const auto& segs = enc.ctc_segments;
        for (std::size_t i = 0; i < chunk.size(); ++i) {
          Tensor rows({segs.length(i), lp.cols()});
          double total = 0.0;
          for (std::size_t t = 0; t < segs.length(i); ++t) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < lp.cols(); ++j) {
              rows.at(t, j) = lp.at(segs.begin(i) + t, j);
              m = std::max(m, rows.at(t, j));
            }
            total += m;
          }
          Hypothesis h;
          h.tokens = ctc_greedy_collapse(rows);
          h.log_prob = total;
          h.score = total / static_cast<double>(std::max<std::size_t>(segs.length(i), 1));
          part.push_back(std::move(h));
        }
        break;
      }
      case DecodeMode::attention_greedy: part = greedy(model, tape, enc, chunk.size(), config, audio_path); break;
      case DecodeMode::attention_beam: part = beam_search(model, tape, enc, chunk.size(), config, audio_path); break;
    }
    for (auto& h : part) out.push_back(std::move(h));
  }
  return out;
}

std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double cer(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  const double e = static_cast<double>(levenshtein(reference, hypothesis));
  return reference.empty() ? e : e / static_cast<double>(reference.size());
}

double corpus_cer(const std::vector<std::vector<int>>& references, const std::vector<std::vector<int>>& hypotheses) {
  if (references.size() != hypotheses.size()) throw ContractError("corpus_cer: size mismatch");
  std::size_t edits = 0, total = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    edits += levenshtein(references[i], hypotheses[i]);
    total += references[i].size();
  }
  return total == 0 ? static_cast<double>(edits) : static_cast<double>(edits) / static_cast<double>(total);
}

Transcript transcribe(Model& model, const std::vector<Utterance>& utterances, const DecodeConfig& config,
                      InputMode mode) {
  Transcript t;
  auto hyps = decode(model, utterances, config, mode);
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    t.ids.push_back(utterances[i].id);
    t.tokens.push_back(std::move(hyps[i].tokens));
  }
  return t;
}

double relative_cer(const Transcript& a, const Transcript& b) {
  if (a.ids != b.ids) throw ContractError("relative_cer: transcripts cover different utterances");
  return corpus_cer(a.tokens, b.tokens);
}

std::uint64_t suite_point_seed(std::uint64_t suite_seed, DropoutMethod method, double rate) {
  return derive_key({suite_seed, tag_hash(to_string(method)), std::bit_cast<std::uint64_t>(rate)});
}

std::vector<Utterance> apply_suite_dropout(const std::vector<Utterance>& utterances, DropoutMethod method, double rate,
                                           std::uint64_t suite_seed) {
  DropoutSpec spec;
  spec.method = method;
  spec.rate = rate;
  spec.target = Modality::video;
  spec.seed = suite_point_seed(suite_seed, method, rate);
  std::vector<Utterance> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) out.push_back(apply_dropout(u, spec));
  return out;
}

DegradationCurve degradation_curve(Model& model, const std::vector<Utterance>& test, const DecodeConfig& config,
                                   InputMode mode, std::uint64_t suite_seed, int threads) {
  DegradationCurve c;
  c.rates = suite_rates();
  c.methods = suite_methods();
  const std::size_t nm = c.methods.size(), nr = c.rates.size();
  c.cer.assign(nm, std::vector<double>(nr, 0.0));
  std::vector<std::vector<int>> refs;
  for (const auto& u : test) refs.push_back(u.labels);

  // Rate 0 leaves every utterance untouched, so it is decoded once.
  std::vector<std::pair<std::size_t, std::size_t>> points;
  for (std::size_t m = 0; m < nm; ++m)
    for (std::size_t r = 0; r < nr; ++r)
      if (c.rates[r] > 0.0 || m == 0) points.emplace_back(m, r);
  auto run = [&](std::size_t p) {
    const auto [m, r] = points[p];
    const auto input = apply_suite_dropout(test, c.methods[m], c.rates[r], suite_seed);
    const auto t = transcribe(model, input, config, mode);
    c.cer[m][r] = corpus_cer(refs, t.tokens);
  };
  const std::size_t nt = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)),
                                                                       points.size()));
  if (nt == 1) {
    for (std::size_t p = 0; p < points.size(); ++p) run(p);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nt);
    for (std::size_t w = 0; w < nt; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t p = w; p < points.size(); p += nt) run(p);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (std::size_t r = 0; r < nr; ++r)
    if (c.rates[r] == 0.0)
      for (std::size_t m = 1; m < nm; ++m) c.cer[m][r] = c.cer[0][r];
  c.averaged.assign(nr, 0.0);
  for (std::size_t r = 0; r < nr; ++r) {
    for (std::size_t m = 0; m < nm; ++m) c.averaged[r] += c.cer[m][r];
    c.averaged[r] /= static_cast<double>(nm);
  }
  return c;
}

std::string degradation_csv(const DegradationCurve& c) {
  std::ostringstream os;
  os << std::setprecision(10) << "method,rate,cer\n";
  for (std::size_t m = 0; m < c.methods.size(); ++m)
    for (std::size_t r = 0; r < c.rates.size(); ++r)
      os << to_string(c.methods[m]) << ',' << c.rates[r] << ',' << c.cer[m][r] << '\n';
  for (std::size_t r = 0; r < c.rates.size(); ++r) os << "average," << c.rates[r] << ',' << c.averaged[r] << '\n';
  return os.str();
}

nlohmann::json degradation_json(const DegradationCurve& c) {
  nlohmann::json j;
  j["rates"] = c.rates;
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t m = 0; m < c.methods.size(); ++m) per[to_string(c.methods[m])] = c.cer[m];
  j["cer"] = per;
  j["average"] = c.averaged;
  return j;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

std::string degradation_svg(const DegradationCurve& c) {
  const double w = 480, h = 320, left = 50, right = 20, top = 20, bottom = 40;
  double ymax = 0.05;
  for (const auto& row : c.cer)
    for (double v : row) ymax = std::max(ymax, v);
  ymax *= 1.1;
  auto px = [&](double rate) { return left + rate * (w - left - right); };
  auto py = [&](double v) { return h - bottom - v / ymax * (h - top - bottom); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#444444"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << w - right << "\" y2=\"" << py(0)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << py(0)
     << "\" stroke=\"black\"/>\n";
  for (double r : c.rates)
    os << "<text x=\"" << px(r) << "\" y=\"" << h - bottom + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
       << fmt(r) << "</text>\n";
  os << "<text x=\"" << left - 6 << "\" y=\"" << py(ymax / 1.1) << "\" font-size=\"11\" text-anchor=\"end\">"
     << fmt(ymax / 1.1) << "</text>\n";
  os << "<text x=\"" << (w / 2) << "\" y=\"" << h - 6 << "\" font-size=\"12\" text-anchor=\"middle\">video dropout rate</text>\n";
  auto series = [&](const std::vector<double>& ys, const std::string& name, const char* color, std::size_t k) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t r = 0; r < ys.size(); ++r) os << px(c.rates[r]) << ',' << py(ys[r]) << ' ';
    os << "\"/>\n<text x=\"" << left + 8 << "\" y=\"" << top + 14 * (k + 1) << "\" font-size=\"11\" fill=\"" << color
       << "\">" << name << "</text>\n";
  };
  for (std::size_t m = 0; m < c.methods.size(); ++m) series(c.cer[m], to_string(c.methods[m]), colors[m % 3], m);
  series(c.averaged, "average", colors[3], c.methods.size());
  os << "</svg>\n";
  return os.str();
}

Tensor pooled_taps(Model& model, const std::vector<Utterance>& utterances, const std::string& tap, InputMode mode) {
  if (std::find(tap_tags().begin(), tap_tags().end(), tap) == tap_tags().end())
    throw ContractError("unknown tap '" + tap + "'");
  if (mode == InputMode::audio_only && !model.adapters) throw StateError("audio-only path needs adapters");
  if (utterances.empty()) throw ContractError("pooled_taps: no utterances");
  Tensor out;
  std::size_t row = 0;
  const std::size_t bs = 64;
  for (std::size_t lo = 0; lo < utterances.size(); lo += bs) {
    const std::size_t hi = std::min(utterances.size(), lo + bs);
    std::vector<Utterance> chunk(utterances.begin() + static_cast<std::ptrdiff_t>(lo),
                                 utterances.begin() + static_cast<std::ptrdiff_t>(hi));
    Tape tape;
    tape.set_grad_enabled(false);
    const ForwardOutput f = encode(model, tape, make_batch(chunk), mode);
    auto it = f.taps.find(tap);
    if (it == f.taps.end()) throw ContractError("tap '" + tap + "' was not computed on this path");
    const Tensor& v = it->second.value.value();
    const auto& segs = it->second.segments;
    if (out.empty()) out = Tensor({utterances.size(), v.cols()});
    for (std::size_t i = 0; i < chunk.size(); ++i, ++row) {
      double norm = 0.0;
      for (std::size_t j = 0; j < v.cols(); ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < segs.length(i); ++t) s += v.at(segs.begin(i) + t, j);
        out.at(row, j) = s / static_cast<double>(segs.length(i));
        norm += out.at(row, j) * out.at(row, j);
      }
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (std::size_t j = 0; j < v.cols(); ++j) out.at(row, j) /= norm;
    }
  }
  return out;
}

SimilarityMatrix cosine_similarity(const Tensor& a, const Tensor& b, const std::string& tap) {
  if (a.cols() != b.cols())
    throw ContractError("similarity: tap widths differ (" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.cols()) + ")");
  if (a.rows() != b.rows()) throw ContractError("similarity: utterance counts differ");
  SimilarityMatrix m;
  m.tap = tap;
  m.n = a.rows();
  m.values.assign(m.n * m.n, 0.0);
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t j = 0; j < m.n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(j, k);
      m.values[i * m.n + j] = s;
    }
  for (std::size_t i = 0; i < m.n; ++i) m.diag_mean += m.at(i, i);
  m.diag_mean /= static_cast<double>(m.n);
  return m;
}

SimilarityMatrix similarity_matrix(Model& a, Model& b, const std::vector<Utterance>& utterances, const std::string& tap,
                                   InputMode mode_a, InputMode mode_b) {
  return cosine_similarity(pooled_taps(a, utterances, tap, mode_a), pooled_taps(b, utterances, tap, mode_b), tap);
}

nlohmann::json similarity_json(const SimilarityMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.n; ++i)
    rows.push_back(std::vector<double>(m.values.begin() + static_cast<std::ptrdiff_t>(i * m.n),
                                       m.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * m.n)));
  return {{"tap", m.tap}, {"n", m.n}, {"diag_mean", m.diag_mean}, {"matrix", rows}};
}

std::string similarity_svg(const SimilarityMatrix& m) {
  const double cell = m.n > 0 ? std::max(2.0, 400.0 / static_cast<double>(m.n)) : 1.0;
  const double side = cell * static_cast<double>(m.n);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << side + 20 << "\" height=\"" << side + 40 << "\">\n";
  os << "<text x=\"10\" y=\"16\" font-size=\"12\">" << m.tap << " diag mean " << fmt(m.diag_mean) << "</text>\n";
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t j = 0; j < m.n; ++j) {
      // Map [-1, 1] to blue..white..red.
      const double v = std::clamp(m.at(i, j), -1.0, 1.0);
      const int hi = 255, lo = static_cast<int>(255 * (1.0 - std::abs(v)));
      const int r = v >= 0 ? hi : lo, g = lo, b = v >= 0 ? lo : hi;
      os << "<rect x=\"" << 10 + cell * static_cast<double>(j) << "\" y=\"" << 30 + cell * static_cast<double>(i)
         << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ',' << g << ',' << b
         << ")\"/>\n";
    }
  os << "</svg>\n";
  return os.str();
}

BiasProxyReport bias_proxy_report(Model& model, const std::vector<Utterance>& test, const DecodeConfig& config,
                                  Model* reference) {
  BiasProxyReport r;
  std::vector<std::vector<int>> refs;
  for (const auto& u : test) refs.push_back(u.labels);
  auto run = [&](const std::vector<Utterance>& input) {
    return corpus_cer(refs, transcribe(model, input, config, InputMode::complete).tokens);
  };
  r.cer_complete = run(test);
  std::vector<Utterance> no_video, no_audio;
  for (const auto& u : test) {
    no_video.push_back(apply_utterance_dropout(u, 1.0, 0, Modality::video));
    no_audio.push_back(apply_utterance_dropout(u, 1.0, 0, Modality::audio));
  }
  r.cer_video_missing = run(no_video);
  r.cer_audio_missing = run(no_audio);
  if (reference) {
    r.has_reference = true;
    const InputMode ref_mode = InputMode::complete;
    r.diag_mean_fusion_out = similarity_matrix(model, *reference, test, "fusion_out", InputMode::complete, ref_mode).diag_mean;
    r.diag_mean_joint_out = similarity_matrix(model, *reference, test, "joint_out", InputMode::complete, ref_mode).diag_mean;
  }
  return r;
}

nlohmann::json bias_proxy_json(const BiasProxyReport& r) {
  nlohmann::json j{{"cer_complete", r.cer_complete},
                   {"cer_video_missing", r.cer_video_missing},
                   {"cer_audio_missing", r.cer_audio_missing}};
  if (r.has_reference) {
    j["diag_mean_fusion_out"] = r.diag_mean_fusion_out;
    j["diag_mean_joint_out"] = r.diag_mean_joint_out;
  }
  return j;
}

}  // namespace mblab
