#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "mblab/corpus/dropout.hpp"
#include "mblab/model/model.hpp"

namespace mblab {

enum class DecodeMode { attention_greedy, attention_beam, ctc_greedy };
std::string to_string(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& s);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::attention_greedy;
  int beam_width = 4;
  int max_decode_len = 32;
  int batch_size = 64;

  void validate() const;  // throws ConfigError
};

enum class InputMode { complete, audio_only };
std::string to_string(InputMode m);
InputMode parse_input_mode(const std::string& s);

struct Hypothesis {
  std::vector<int> tokens;
  // Sum of decoder log-probabilities of the emitted tokens and the end
  // symbol; `score` is that sum divided by the number of emitted symbols.
  double log_prob = 0.0;
  double score = 0.0;
  bool truncated = false;  // hit max_decode_len without an end symbol
};

// audio_only requires adapters (StateError otherwise). Utterances are
// decoded as given; apply test-time dropout beforehand.
std::vector<Hypothesis> decode(Model& model, const std::vector<Utterance>& utterances, const DecodeConfig& config,
                               InputMode mode);

// CTC best path: per-frame argmax, merge repeats, drop blanks.
std::vector<int> ctc_greedy_collapse(const Tensor& logits);

// Edit distance (unit substitution/insertion/deletion).
std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b);
// edits / |reference|; an empty reference yields |hypothesis|.
double cer(const std::vector<int>& reference, const std::vector<int>& hypothesis);
// Corpus-level: total edits over total reference length.
double corpus_cer(const std::vector<std::vector<int>>& references, const std::vector<std::vector<int>>& hypotheses);

struct Transcript {
  std::vector<std::uint32_t> ids;
  std::vector<std::vector<int>> tokens;
};

Transcript transcribe(Model& model, const std::vector<Utterance>& utterances, const DecodeConfig& config,
                      InputMode mode);
// Corpus CER of B's transcripts against A's (A is the reference, so the
// normalizer is A's total length). Throws ContractError on id mismatch.
double relative_cer(const Transcript& a, const Transcript& b);

// Test suite grid.
inline const std::vector<double>& suite_rates() {
  static const std::vector<double> r{0.0, 0.25, 0.5, 0.75, 1.0};
  return r;
}
inline const std::vector<DropoutMethod>& suite_methods() {
  static const std::vector<DropoutMethod> m{DropoutMethod::segment, DropoutMethod::utterance,
                                             DropoutMethod::interval};
  return m;
}

// Seed for one grid point; dropout ops further key by utterance id.
std::uint64_t suite_point_seed(std::uint64_t suite_seed, DropoutMethod method, double rate);
std::vector<Utterance> apply_suite_dropout(const std::vector<Utterance>& utterances, DropoutMethod method, double rate,
                                           std::uint64_t suite_seed);

struct DegradationCurve {
  std::vector<double> rates;
  std::vector<DropoutMethod> methods;
  std::vector<std::vector<double>> cer;  // [method][rate]
  std::vector<double> averaged;          // [rate]
};

DegradationCurve degradation_curve(Model& model, const std::vector<Utterance>& test, const DecodeConfig& config,
                                   InputMode mode, std::uint64_t suite_seed, int threads = 1);

// Rows: one per method x rate, then one "average" row per rate.
std::string degradation_csv(const DegradationCurve& curve);
nlohmann::json degradation_json(const DegradationCurve& curve);
std::string degradation_svg(const DegradationCurve& curve);

struct SimilarityMatrix {
  std::string tap;
  std::size_t n = 0;
  std::vector<double> values;  // row-major n x n; rows model A, columns model B
  double diag_mean = 0.0;

  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

// Time-mean pooled, L2-normalised tap vectors per utterance, returned [n x d].
Tensor pooled_taps(Model& model, const std::vector<Utterance>& utterances, const std::string& tap, InputMode mode);
SimilarityMatrix cosine_similarity(const Tensor& pooled_a, const Tensor& pooled_b, const std::string& tap);
SimilarityMatrix similarity_matrix(Model& a, Model& b, const std::vector<Utterance>& utterances, const std::string& tap,
                                   InputMode mode_a, InputMode mode_b);
nlohmann::json similarity_json(const SimilarityMatrix& m);
std::string similarity_svg(const SimilarityMatrix& m);

struct BiasProxyReport {
  double cer_complete = 0.0;
  double cer_video_missing = 0.0;
  double cer_audio_missing = 0.0;
  bool has_reference = false;
  double diag_mean_fusion_out = 0.0;
  double diag_mean_joint_out = 0.0;
};

// CER with complete input, with the whole video zeroed and with the whole
// audio zeroed; optional similarity to an audio-only reference model.
BiasProxyReport bias_proxy_report(Model& model, const std::vector<Utterance>& test, const DecodeConfig& config,
                                  Model* audio_only_reference = nullptr);
nlohmann::json bias_proxy_json(const BiasProxyReport& r);

}  // namespace mblab
