#include "mblab/cli/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "mblab/errors.hpp"
#include "mblab/util/bytes.hpp"

namespace mblab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d{
      {"run.seed", "1"},
      {"corpus.vocab_size", "12"},
      {"corpus.n_general", "6"},
      {"corpus.n_audio_pairs", "2"},
      {"corpus.n_video_pairs", "1"},
      {"corpus.frames_per_token_audio", "4"},
      {"corpus.frames_per_token_video", "2"},
      {"corpus.audio_dim", "16"},
      {"corpus.video_dim", "12"},
      {"corpus.audio_noise", "0.6"},
      {"corpus.video_noise", "0.4"},
      {"corpus.prototype_scale", "1"},
      {"corpus.min_len", "3"},
      {"corpus.max_len", "8"},
      {"corpus.n_utterances", "2000"},
      {"corpus.split", "train"},
      {"model.d_model", "64"},
      {"model.n_heads", "4"},
      {"model.d_ffn", "128"},
      {"model.n_audio_blocks", "2"},
      {"model.n_video_blocks", "2"},
      {"model.n_fusion_blocks", "1"},
      {"model.n_joint_blocks", "2"},
      {"model.n_decoder_blocks", "2"},
      {"model.max_len", "128"},
      {"model.ctc_taps", "1,2"},
      {"model.audio_to_video", "true"},
      {"adapter.rank", "8"},
      {"adapter.insert_part", "encoder"},
      {"adapter.scale", "-1"},
      {"train.epochs", "10"},
      {"train.batch_size", "32"},
      {"train.learning_rate", "0.001"},
      {"train.warmup_steps", "200"},
      {"train.d_prob", "auto"},
      {"train.method_pool", "auto"},
      {"train.rate", "auto"},
      {"train.lambda", "0.7"},
      {"train.w_kd", "0.1"},
      {"train.temperature", "1"},
      {"train.frozen_scopes", ""},
      {"train.kd_taps", "fusion_out"},
      {"train.validation_fraction", "0.1"},
      {"train.augment", "true"},
      {"train.validation_decode", "ctc_greedy"},
      {"eval.decode_mode", "attention_greedy"},
      {"eval.beam_width", "4"},
      {"eval.max_decode_len", "32"},
      {"eval.batch_size", "64"},
      {"eval.similarity_utterances", "100"},
      {"eval.flops_audio_frames", "32"},
      {"eval.flops_video_frames", "16"},
      {"eval.flops_target_len", "9"},
  };
  return d;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::merge_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::merge_file(const std::string& path) { merge_text(read_file(path)); }

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

long RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

CorpusSpec corpus_spec_from(const RunConfig& c) {
  CorpusSpec s;
  s.vocab_size = static_cast<int>(c.get_int("corpus.vocab_size"));
  s.n_general = static_cast<int>(c.get_int("corpus.n_general"));
  s.n_audio_pairs = static_cast<int>(c.get_int("corpus.n_audio_pairs"));
  s.n_video_pairs = static_cast<int>(c.get_int("corpus.n_video_pairs"));
  s.frames_per_token_audio = static_cast<int>(c.get_int("corpus.frames_per_token_audio"));
  s.frames_per_token_video = static_cast<int>(c.get_int("corpus.frames_per_token_video"));
  s.audio_dim = static_cast<int>(c.get_int("corpus.audio_dim"));
  s.video_dim = static_cast<int>(c.get_int("corpus.video_dim"));
  s.audio_noise = c.get_double("corpus.audio_noise");
  s.video_noise = c.get_double("corpus.video_noise");
  s.prototype_scale = c.get_double("corpus.prototype_scale");
  s.min_len = static_cast<int>(c.get_int("corpus.min_len"));
  s.max_len = static_cast<int>(c.get_int("corpus.max_len"));
  s.n_utterances = static_cast<int>(c.get_int("corpus.n_utterances"));
  s.split = c.get("corpus.split");
  s.seed = c.get_u64("run.seed");
  s.validate();
  return s;
}

ModelConfig model_config_from(const RunConfig& c, const CorpusSpec& spec) {
  ModelConfig m = model_config_for(spec);
  m.d_model = static_cast<int>(c.get_int("model.d_model"));
  m.n_heads = static_cast<int>(c.get_int("model.n_heads"));
  m.d_ffn = static_cast<int>(c.get_int("model.d_ffn"));
  m.n_audio_blocks = static_cast<int>(c.get_int("model.n_audio_blocks"));
  m.n_video_blocks = static_cast<int>(c.get_int("model.n_video_blocks"));
  m.n_fusion_blocks = static_cast<int>(c.get_int("model.n_fusion_blocks"));
  m.n_joint_blocks = static_cast<int>(c.get_int("model.n_joint_blocks"));
  m.n_decoder_blocks = static_cast<int>(c.get_int("model.n_decoder_blocks"));
  m.max_len = static_cast<int>(c.get_int("model.max_len"));
  m.intermediate_ctc_taps.clear();
  for (const auto& t : c.get_list("model.ctc_taps")) {
    int v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError("model.ctc_taps: bad entry '" + t + "'");
    m.intermediate_ctc_taps.push_back(v);
  }
  m.validate();
  return m;
}

AdapterConfig adapter_config_from(const RunConfig& c) {
  AdapterConfig a;
  a.rank = static_cast<int>(c.get_int("adapter.rank"));
  a.insert_part = parse_insert_part(c.get("adapter.insert_part"));
  a.scale = c.get_double("adapter.scale");
  return a;
}

DecodeConfig decode_config_from(const RunConfig& c) {
  DecodeConfig d;
  d.mode = parse_decode_mode(c.get("eval.decode_mode"));
  d.beam_width = static_cast<int>(c.get_int("eval.beam_width"));
  d.max_decode_len = static_cast<int>(c.get_int("eval.max_decode_len"));
  d.batch_size = static_cast<int>(c.get_int("eval.batch_size"));
  d.validate();
  return d;
}

FlopInputs flop_inputs_from(const RunConfig& c) {
  FlopInputs f;
  f.audio_frames = static_cast<std::size_t>(c.get_u64("eval.flops_audio_frames"));
  f.video_frames = static_cast<std::size_t>(c.get_u64("eval.flops_video_frames"));
  f.target_len = static_cast<std::size_t>(c.get_u64("eval.flops_target_len"));
  return f;
}

TrainRecipe recipe_from(const RunConfig& c, RecipeKind kind) {
  TrainRecipe r = default_recipe(kind);
  r.epochs = static_cast<int>(c.get_int("train.epochs"));
  r.batch_size = static_cast<int>(c.get_int("train.batch_size"));
  r.learning_rate = c.get_double("train.learning_rate");
  r.warmup_steps = static_cast<int>(c.get_int("train.warmup_steps"));
  if (c.get("train.d_prob") != "auto") r.dropout_policy.d_prob = c.get_double("train.d_prob");
  if (c.get("train.rate") != "auto") r.dropout_policy.rate = c.get_double("train.rate");
  if (c.get("train.method_pool") != "auto") {
    r.dropout_policy.method_pool.clear();
    for (const auto& m : c.get_list("train.method_pool")) r.dropout_policy.method_pool.push_back(parse_dropout_method(m));
  }
  r.weights.lambda = c.get_double("train.lambda");
  r.weights.w_kd = c.get_double("train.w_kd");
  r.weights.temperature = c.get_double("train.temperature");
  r.frozen_scopes = c.get_list("train.frozen_scopes");
  r.kd_taps = c.get_list("train.kd_taps");
  r.validation_fraction = c.get_double("train.validation_fraction");
  r.augment = c.get_bool("train.augment");
  r.validation_decode.mode = parse_decode_mode(c.get("train.validation_decode"));
  r.seed = c.get_u64("run.seed");
  r.flow_flags.audio_to_video = c.get_bool("model.audio_to_video");
  r.validate();
  return r;
}

void store_recipe(RunConfig& c, const TrainRecipe& r) {
  c.set("train.d_prob", num(r.dropout_policy.d_prob));
  c.set("train.rate", num(r.dropout_policy.rate));
  std::vector<std::string> pool;
  for (auto m : r.dropout_policy.method_pool) pool.push_back(to_string(m));
  c.set("train.method_pool", join(pool));
}

}  // namespace mblab
