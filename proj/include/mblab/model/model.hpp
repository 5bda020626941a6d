#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mblab/corpus/corpus.hpp"
#include "mblab/numerics/ops.hpp"
#include "mblab/numerics/parameter.hpp"
#include "mblab/numerics/tape.hpp"

namespace mblab {

// Decoder symbols: 0 is never produced (it is the CTC blank), 1..V are
// tokens, V+1 is the shared start/end symbol.
struct ModelConfig {
  int audio_dim = 16;
  int video_dim = 12;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 128;
  int n_audio_blocks = 2;
  int n_video_blocks = 2;
  int n_fusion_blocks = 1;
  int n_joint_blocks = 2;
  int n_decoder_blocks = 2;
  int vocab_size_with_blank = 13;
  int max_len = 128;
  // 1-based joint block indices feeding the shared CTC head. The final block
  // is always included.
  std::vector<int> intermediate_ctc_taps{1, 2};

  void validate() const;  // throws ConfigError
  int vocab_size() const { return vocab_size_with_blank - 1; }
  int decoder_vocab() const { return vocab_size_with_blank + 1; }
  int sos_eos() const { return vocab_size_with_blank; }
  std::vector<int> ctc_tap_blocks() const;
  int joint_mid_block() const { return (n_joint_blocks + 1) / 2; }
  bool operator==(const ModelConfig&) const = default;
};

ModelConfig model_config_for(const CorpusSpec& spec);

enum class InsertPart { encoder, encoder_and_decoder };
std::string to_string(InsertPart p);
InsertPart parse_insert_part(const std::string& s);

struct AdapterConfig {
  int rank = 8;
  InsertPart insert_part = InsertPart::encoder;
  // Multiplies the low-rank delta; a negative value means 1/rank.
  double scale = -1.0;

  double effective_scale() const { return scale < 0.0 ? 1.0 / rank : scale; }
  bool operator==(const AdapterConfig&) const = default;
};

// Routing switches of the full path.
struct FlowFlags {
  // false: video branch, fusion cross-attention and the merge cross-attention
  // are skipped (the audio-only reference model).
  bool video_enabled = true;
  // false: the video stream does not attend to the audio stream in fusion.
  bool audio_to_video = true;
  bool operator==(const FlowFlags&) const = default;
};

struct Provenance {
  std::string recipe = "init";
  std::uint64_t seed = 0;
  std::string parent;  // checkpoint id, empty when trained from scratch
};

struct Model {
  ModelConfig config;
  FlowFlags flow;
  ParameterStore params;
  std::optional<AdapterConfig> adapters;
  bool adapter_active = false;
  Provenance provenance;
};

// Projection weights use U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero,
// layer-norm gain one and shift zero, embeddings U(-1, 1). Values are drawn
// from per-tensor streams keyed by (seed, name) and rounded to float32.
Model build_model(const ModelConfig& config, std::uint64_t init_seed);

// Target projections (by weight prefix) for adapters of the given placement.
std::vector<std::string> adapter_targets(const ModelConfig& config, InsertPart part);
// Adds A [r x d] and B [d x r] per target (B zero) and freezes every base
// tensor. Throws StateError if adapters exist, ConfigError if r >= d_model.
void insert_adapters(Model& model, const AdapterConfig& adapter);
void set_adapter_active(Model& model, bool active);  // StateError without adapters
bool is_adapter_tensor(const std::string& name);
std::size_t adapter_parameter_count(const ModelConfig& config, const AdapterConfig& adapter);

// Packed batch: rows of every utterance are stacked, segment tables give
// each utterance's extent. No padding exists inside the model.
struct Batch {
  Tensor audio;
  ops::Segments audio_segments;
  Tensor video;
  ops::Segments video_segments;
  std::vector<std::vector<int>> labels;
  std::vector<std::uint32_t> ids;

  std::size_t size() const { return labels.size(); }
};

Batch make_batch(const std::vector<Utterance>& utterances);
// Builds a batch from a padded [B*max_rows x d] layout by dropping rows past
// each true length.
Tensor unpad_rows(const Tensor& padded, std::size_t max_rows, const std::vector<std::size_t>& lengths);

struct TapValue {
  Var value;
  ops::Segments segments;
};

struct ForwardOutput {
  // Teacher-forced logits [sum(L_i + 1) x (V + 2)]; input [sos, y], target [y, eos].
  Var decoder_logits;
  ops::Segments decoder_segments;
  std::vector<int> decoder_targets;
  // One entry per CTC tap block, [sum(T_a) x (V + 1)].
  std::vector<Var> ctc_logits;
  std::vector<int> ctc_tap_blocks;
  ops::Segments ctc_segments;
  // video_frontend_out, video_block_1, fusion_out, joint_mid, joint_out
  // (the video taps are absent when the video branch does not run).
  std::map<std::string, TapValue> taps;
  // Encoder output consumed by the decoder.
  Var memory;
};

inline const std::vector<std::string>& tap_tags() {
  static const std::vector<std::string> tags{"video_frontend_out", "video_block_1", "fusion_out", "joint_mid",
                                             "joint_out"};
  return tags;
}

// Full audio-visual path. Adapter deltas are never applied here.
ForwardOutput forward_full(Model& model, Tape& tape, const Batch& batch, bool with_targets = true);
// Switched audio-only path: the video branch and every cross-attention that
// reads video are not executed; adapter deltas are applied. Requires adapters.
ForwardOutput forward_audio_only(Model& model, Tape& tape, const Batch& batch, bool with_targets = true);
// Dispatches on model.adapter_active.
ForwardOutput forward(Model& model, Tape& tape, const Batch& batch, bool with_targets = true);

// Incremental decoding support: logits of the last position of every prefix.
// `owner[i]` is the batch index whose memory prefix i attends to. Prefixes
// start with the start symbol.
Var decoder_next_logits(Model& model, Tape& tape, const ForwardOutput& encoded,
                        const std::vector<std::vector<int>>& prefixes, const std::vector<std::size_t>& owner,
                        bool audio_path);

enum class ComputePath { full, audio_only };
std::string to_string(ComputePath p);

struct FlopInputs {
  std::size_t audio_frames = 32;
  std::size_t video_frames = 16;
  std::size_t target_len = 9;  // decoder positions (label length + 1)
};

struct FlopsParams {
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

// Analytic count: every matrix product contributes 2*m*k*n and every
// attention score/context pair 4*Tq*Tk*d (causal attention counted dense).
// Element-wise work (norms, activations, softmax) is excluded. `params`
// counts the tensors the path reads.
FlopsParams count_flops_params(const Model& model, ComputePath path, const FlopInputs& inputs = {});

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// "MBLABCK1", u32 LE manifest length, JSON {config, flow, adapter?,
// provenance, tensors: [{name, shape, dtype, offset}]}, f32 LE blob.
// Parameters are rounded to float32 before writing.
std::string encode_checkpoint(Model& model);
Model decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, Model& model);
Model load_checkpoint(const std::filesystem::path& path);
// Loads tensor values into an existing model, checking names and shapes.
void load_checkpoint_into(Model& model, std::string_view bytes);
std::string checkpoint_id(Model& model);

}  // namespace mblab
