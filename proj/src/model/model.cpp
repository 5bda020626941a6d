#include "mblab/model/model.hpp"

#include <algorithm>
#include <cmath>

#include "mblab/corpus/rng.hpp"
#include "mblab/errors.hpp"

namespace mblab {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (audio_dim < 1 || video_dim < 1) fail("input dims must be >= 1");
  if (d_model < 1 || n_heads < 1 || d_ffn < 1) fail("d_model, n_heads and d_ffn must be >= 1");
  if (d_model % n_heads != 0) {
    fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
  if (n_audio_blocks < 1 || n_video_blocks < 1 || n_fusion_blocks < 1 || n_joint_blocks < 1 || n_decoder_blocks < 1) {
    fail("all block counts must be >= 1");
  }
  if (vocab_size_with_blank < 2) fail("vocab_size_with_blank must be >= 2");
  if (max_len < 1) fail("max_len must be >= 1");
  for (int t : intermediate_ctc_taps) {
    if (t < 1 || t > n_joint_blocks) {
      fail("ctc tap " + std::to_string(t) + " outside joint blocks [1, " + std::to_string(n_joint_blocks) + "]");
    }
  }
}

std::vector<int> ModelConfig::ctc_tap_blocks() const {
  std::vector<int> taps = intermediate_ctc_taps;
  taps.push_back(n_joint_blocks);
  std::sort(taps.begin(), taps.end());
  taps.erase(std::unique(taps.begin(), taps.end()), taps.end());
  return taps;
}

ModelConfig model_config_for(const CorpusSpec& spec) {
  ModelConfig c;
  c.audio_dim = spec.audio_dim;
  c.video_dim = spec.video_dim;
  c.vocab_size_with_blank = spec.vocab_size + 1;
  return c;
}

std::string to_string(InsertPart p) { return p == InsertPart::encoder ? "encoder" : "encoder_and_decoder"; }

InsertPart parse_insert_part(const std::string& s) {
  if (s == "encoder") return InsertPart::encoder;
  if (s == "encoder_and_decoder") return InsertPart::encoder_and_decoder;
  throw ConfigError("unknown adapter insert part '" + s + "'");
}

std::string to_string(ComputePath p) { return p == ComputePath::full ? "full" : "audio_only"; }

namespace {

std::string idx(const std::string& base, int i) { return base + std::to_string(i); }

// Adds one parameter with values from its own stream.
enum class Init { fan_in, zeros, ones, embedding };

void add_param(ParameterStore& store, std::uint64_t seed, const std::string& name, Shape shape, Init init,
               std::size_t fan_in = 1) {
  Tensor t(std::move(shape), 0.0);
  CounterRng rng(seed, tag_hash(name), "init");
  switch (init) {
    case Init::zeros: break;
    case Init::ones: t.fill(1.0); break;
    case Init::fan_in: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : t.storage()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
      break;
    }
    case Init::embedding:
      for (double& v : t.storage()) v = static_cast<float>(2.0 * rng.uniform() - 1.0);
      break;
  }
  store.add(name, std::move(t));
}

void add_linear(ParameterStore& s, std::uint64_t seed, const std::string& name, std::size_t in, std::size_t out) {
  add_param(s, seed, name + ".weight", {in, out}, Init::fan_in, in);
  add_param(s, seed, name + ".bias", {out}, Init::zeros);
}

void add_ln(ParameterStore& s, std::uint64_t seed, const std::string& name, std::size_t d) {
  add_param(s, seed, name + ".gamma", {d}, Init::ones);
  add_param(s, seed, name + ".beta", {d}, Init::zeros);
}

void add_attention(ParameterStore& s, std::uint64_t seed, const std::string& name, std::size_t d) {
  for (const char* p : {".q", ".k", ".v", ".o"}) add_linear(s, seed, name + p, d, d);
}

void add_ffn(ParameterStore& s, std::uint64_t seed, const std::string& name, std::size_t d, std::size_t f) {
  add_linear(s, seed, name + ".fc1", d, f);
  add_linear(s, seed, name + ".fc2", f, d);
}

void add_encoder_block(ParameterStore& s, std::uint64_t seed, const std::string& name, std::size_t d,
                       std::size_t f) {
  add_ln(s, seed, name + ".ln1", d);
  add_attention(s, seed, name + ".attn", d);
  add_ln(s, seed, name + ".ln2", d);
  add_ffn(s, seed, name + ".ffn", d, f);
}

void add_fusion_stream(ParameterStore& s, std::uint64_t seed, const std::string& name, std::size_t d, std::size_t f) {
  add_ln(s, seed, name + ".ln_sa", d);
  add_attention(s, seed, name + ".sa", d);
  add_ln(s, seed, name + ".ln_ca_q", d);
  add_ln(s, seed, name + ".ln_ca_kv", d);
  add_attention(s, seed, name + ".ca", d);
  add_ln(s, seed, name + ".ln_ffn", d);
  add_ffn(s, seed, name + ".ffn", d, f);
}

}  // namespace

Model build_model(const ModelConfig& config, std::uint64_t init_seed) {
  config.validate();
  Model m;
  m.config = config;
  m.provenance.seed = init_seed;
  auto& s = m.params;
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.d_ffn);
  const std::uint64_t seed = init_seed;

  add_linear(s, seed, "audio.frontend", static_cast<std::size_t>(config.audio_dim), d);
  for (int i = 1; i <= config.n_audio_blocks; ++i) add_encoder_block(s, seed, idx("audio.block", i), d, f);
  add_linear(s, seed, "video.frontend", static_cast<std::size_t>(config.video_dim), d);
  for (int i = 1; i <= config.n_video_blocks; ++i) add_encoder_block(s, seed, idx("video.block", i), d, f);
  for (int j = 1; j <= config.n_fusion_blocks; ++j) {
    add_fusion_stream(s, seed, idx("fusion", j) + ".audio", d, f);
    add_fusion_stream(s, seed, idx("fusion", j) + ".video", d, f);
  }
  add_ln(s, seed, "merge.ln_q", d);
  add_ln(s, seed, "merge.ln_kv", d);
  add_attention(s, seed, "merge.ca", d);
  add_linear(s, seed, "merge.proj", 2 * d, d);
  for (int i = 1; i <= config.n_joint_blocks; ++i) add_encoder_block(s, seed, idx("joint.block", i), d, f);
  for (int i : config.ctc_tap_blocks()) add_ln(s, seed, idx("joint.ln", i), d);
  add_linear(s, seed, "ctc", d, static_cast<std::size_t>(config.vocab_size_with_blank));
  add_param(s, seed, "decoder.embed", {static_cast<std::size_t>(config.decoder_vocab()), d}, Init::embedding);
  for (int i = 1; i <= config.n_decoder_blocks; ++i) {
    const std::string b = idx("decoder.block", i);
    add_ln(s, seed, b + ".ln1", d);
    add_attention(s, seed, b + ".self_attn", d);
    add_ln(s, seed, b + ".ln2", d);
    add_attention(s, seed, b + ".cross_attn", d);
    add_ln(s, seed, b + ".ln3", d);
    add_ffn(s, seed, b + ".ffn", d, f);
  }
  add_ln(s, seed, "decoder.ln_out", d);
  add_linear(s, seed, "decoder.out", d, static_cast<std::size_t>(config.decoder_vocab()));
  return m;
}

// ---------------------------------------------------------------- adapters

std::vector<std::string> adapter_targets(const ModelConfig& c, InsertPart part) {
  std::vector<std::string> bases;
  for (int i = 1; i <= c.n_audio_blocks; ++i) bases.push_back(idx("audio.block", i) + ".attn");
  for (int j = 1; j <= c.n_fusion_blocks; ++j) bases.push_back(idx("fusion", j) + ".audio.sa");
  for (int i = 1; i <= c.n_joint_blocks; ++i) bases.push_back(idx("joint.block", i) + ".attn");
  if (part == InsertPart::encoder_and_decoder) {
    for (int i = 1; i <= c.n_decoder_blocks; ++i) bases.push_back(idx("decoder.block", i) + ".self_attn");
  }
  std::vector<std::string> targets;
  for (const auto& b : bases) {
    for (const char* p : {".q", ".k", ".v", ".o"}) targets.push_back(b + p);
  }
  return targets;
}

bool is_adapter_tensor(const std::string& name) {
  const auto ends = [&](const std::string& suf) {
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  return ends(".lora_a") || ends(".lora_b");
}

std::size_t adapter_parameter_count(const ModelConfig& c, const AdapterConfig& a) {
  return adapter_targets(c, a.insert_part).size() * 2 * static_cast<std::size_t>(a.rank) *
         static_cast<std::size_t>(c.d_model);
}

namespace {

void validate_adapter(const ModelConfig& c, const AdapterConfig& a) {
  if (a.rank < 1 || a.rank >= c.d_model) {
    throw ConfigError("adapter rank must satisfy 1 <= r < d_model (" + std::to_string(c.d_model) + "), got " +
                      std::to_string(a.rank));
  }
}

}  // namespace

void insert_adapters(Model& model, const AdapterConfig& adapter) {
  if (model.adapters) throw StateError("adapters are already attached");
  validate_adapter(model.config, adapter);
  const auto d = static_cast<std::size_t>(model.config.d_model);
  const auto r = static_cast<std::size_t>(adapter.rank);
  model.params.set_frozen([](const std::string&) { return true; }, true);
  const std::uint64_t seed = model.provenance.seed ^ 0xA5A5A5A5ULL;
  for (const auto& t : adapter_targets(model.config, adapter.insert_part)) {
    add_param(model.params, seed, t + ".lora_b", {d, r}, Init::zeros);
    add_param(model.params, seed, t + ".lora_a", {r, d}, Init::fan_in, r);
  }
  model.adapters = adapter;
  model.adapter_active = false;
}

void set_adapter_active(Model& model, bool active) {
  if (!model.adapters) throw StateError("set_adapter_active: no adapters attached");
  model.adapter_active = active;
}

// ---------------------------------------------------------------- batches

Batch make_batch(const std::vector<Utterance>& utts) {
  if (utts.empty()) throw ContractError("make_batch: empty batch");
  Batch b;
  std::size_t ta = 0, tv = 0;
  for (const auto& u : utts) {
    ta += u.audio.rows();
    tv += u.video.rows();
  }
  const std::size_t da = utts[0].audio.cols(), dv = utts[0].video.cols();
  b.audio = Tensor({ta, da});
  b.video = Tensor({tv, dv});
  std::size_t ra = 0, rv = 0;
  for (const auto& u : utts) {
    if (u.audio.cols() != da || u.video.cols() != dv) throw DimensionError("make_batch: feature widths differ");
    std::copy(u.audio.storage().begin(), u.audio.storage().end(), b.audio.storage().begin() + ra * da);
    std::copy(u.video.storage().begin(), u.video.storage().end(), b.video.storage().begin() + rv * dv);
    ra += u.audio.rows();
    rv += u.video.rows();
    b.audio_segments.push(u.audio.rows());
    b.video_segments.push(u.video.rows());
    b.labels.push_back(u.labels);
    b.ids.push_back(u.id);
  }
  return b;
}

Tensor unpad_rows(const Tensor& padded, std::size_t max_rows, const std::vector<std::size_t>& lengths) {
  const std::size_t d = padded.cols();
  if (padded.rows() != max_rows * lengths.size()) throw DimensionError("unpad_rows: padded rows do not match batch");
  std::size_t total = 0;
  for (auto l : lengths) {
    if (l > max_rows || l == 0) throw DimensionError("unpad_rows: invalid length");
    total += l;
  }
  Tensor out({total, d});
  std::size_t r = 0;
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    std::copy_n(padded.ptr() + b * max_rows * d, lengths[b] * d, out.ptr() + r * d);
    r += lengths[b];
  }
  return out;
}

// ---------------------------------------------------------------- forward

namespace {

Tensor positional_encoding(const ops::Segments& segs, std::size_t d) {
  Tensor pe({segs.total(), d});
  for (std::size_t s = 0; s < segs.count(); ++s) {
    for (std::size_t p = 0; p < segs.length(s); ++p) {
      double* row = pe.ptr() + (segs.begin(s) + p) * d;
      for (std::size_t i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
        row[i] = std::sin(static_cast<double>(p) * freq);
        if (i + 1 < d) row[i + 1] = std::cos(static_cast<double>(p) * freq);
      }
    }
  }
  return pe;
}

void check_lengths(const ops::Segments& segs, int max_len, const char* what) {
  for (std::size_t s = 0; s < segs.count(); ++s) {
    if (segs.length(s) > static_cast<std::size_t>(max_len)) {
      throw ContractError(std::string(what) + " length " + std::to_string(segs.length(s)) + " exceeds max_len " +
                          std::to_string(max_len));
    }
  }
}

class Net {
 public:
  Net(Model& m, Tape& t, bool adapters_on) : m_(m), t_(t), adapters_on_(adapters_on && m.adapters.has_value()) {
    if (adapters_on_) adapter_scale_ = m.adapters->effective_scale();
  }

  Var p(const std::string& name) { return t_.param(m_.params.get(name)); }

  Var proj(const std::string& name, Var x) {
    Var y = ops::linear(x, p(name + ".weight"), p(name + ".bias"));
    if (adapters_on_ && m_.params.contains(name + ".lora_b")) {
      Var delta = ops::matmul(ops::matmul(x, p(name + ".lora_b")), p(name + ".lora_a"));
      y = ops::add(y, ops::scale(delta, adapter_scale_));
    }
    return y;
  }

  Var ln(const std::string& name, Var x) { return ops::layer_norm(x, p(name + ".gamma"), p(name + ".beta")); }

  Var ffn(const std::string& name, Var x) { return proj(name + ".fc2", ops::gelu(proj(name + ".fc1", x))); }

  Var mha(const std::string& name, Var q_in, Var kv_in, const ops::Segments& qs, const ops::Segments& ks,
          bool causal) {
    Var q = proj(name + ".q", q_in);
    Var k = proj(name + ".k", kv_in);
    Var v = proj(name + ".v", kv_in);
    Var ctx = ops::segment_attention(q, k, v, qs, ks, static_cast<std::size_t>(m_.config.n_heads), causal);
    return proj(name + ".o", ctx);
  }

  Var encoder_block(const std::string& name, Var x, const ops::Segments& segs) {
    Var xn = ln(name + ".ln1", x);
    x = ops::add(x, mha(name + ".attn", xn, xn, segs, segs, false));
    return ops::add(x, ffn(name + ".ffn", ln(name + ".ln2", x)));
  }

  Var frontend(const std::string& name, const Tensor& frames, const ops::Segments& segs) {
    Var x = proj(name, t_.constant(frames));
    return ops::add(x, t_.constant(positional_encoding(segs, static_cast<std::size_t>(m_.config.d_model))));
  }

  Var decoder(Var memory, const ops::Segments& mem_segs, const std::vector<int>& ids, const ops::Segments& segs) {
    const auto& c = m_.config;
    Var x = ops::embedding(p("decoder.embed"), ids);
    x = ops::add(x, t_.constant(positional_encoding(segs, static_cast<std::size_t>(c.d_model))));
    for (int i = 1; i <= c.n_decoder_blocks; ++i) {
      const std::string b = idx("decoder.block", i);
      Var xn = ln(b + ".ln1", x);
      x = ops::add(x, mha(b + ".self_attn", xn, xn, segs, segs, true));
      x = ops::add(x, mha(b + ".cross_attn", ln(b + ".ln2", x), memory, segs, mem_segs, false));
      x = ops::add(x, ffn(b + ".ffn", ln(b + ".ln3", x)));
    }
    return proj("decoder.out", ln("decoder.ln_out", x));
  }

 private:
  Model& m_;
  Tape& t_;
  bool adapters_on_;
  double adapter_scale_ = 0.0;
};

struct Route {
  bool use_video;
  bool audio_to_video;
  bool adapters_on;
};

ForwardOutput run(Model& model, Tape& tape, const Batch& batch, bool with_targets, Route route) {
  const auto& c = model.config;
  check_lengths(batch.audio_segments, c.max_len, "audio");
  if (batch.audio.cols() != static_cast<std::size_t>(c.audio_dim)) {
    throw DimensionError("forward: audio width " + std::to_string(batch.audio.cols()) + " != " +
                         std::to_string(c.audio_dim));
  }
  Net net(model, tape, route.adapters_on);
  ForwardOutput out;
  const auto& as = batch.audio_segments;
  const auto& vs = batch.video_segments;

  Var a = net.frontend("audio.frontend", batch.audio, as);
  for (int i = 1; i <= c.n_audio_blocks; ++i) a = net.encoder_block(idx("audio.block", i), a, as);

  Var v;
  if (route.use_video) {
    check_lengths(vs, c.max_len, "video");
    if (vs.count() != as.count()) throw DimensionError("forward: audio and video batch sizes differ");
    if (batch.video.cols() != static_cast<std::size_t>(c.video_dim)) {
      throw DimensionError("forward: video width " + std::to_string(batch.video.cols()) + " != " +
                           std::to_string(c.video_dim));
    }
    v = net.frontend("video.frontend", batch.video, vs);
    out.taps["video_frontend_out"] = {v, vs};
    for (int i = 1; i <= c.n_video_blocks; ++i) {
      v = net.encoder_block(idx("video.block", i), v, vs);
      if (i == 1) out.taps["video_block_1"] = {v, vs};
    }
  }

  for (int j = 1; j <= c.n_fusion_blocks; ++j) {
    const std::string fa = idx("fusion", j) + ".audio";
    const std::string fv = idx("fusion", j) + ".video";
    Var an = net.ln(fa + ".ln_sa", a);
    Var a1 = ops::add(a, net.mha(fa + ".sa", an, an, as, as, false));
    Var a2 = a1;
    if (route.use_video) {
      Var vn = net.ln(fv + ".ln_sa", v);
      Var v1 = ops::add(v, net.mha(fv + ".sa", vn, vn, vs, vs, false));
      a2 = ops::add(a1, net.mha(fa + ".ca", net.ln(fa + ".ln_ca_q", a1), net.ln(fa + ".ln_ca_kv", v1), as, vs, false));
      Var v2 = v1;
      if (route.audio_to_video) {
        v2 = ops::add(v1,
                      net.mha(fv + ".ca", net.ln(fv + ".ln_ca_q", v1), net.ln(fv + ".ln_ca_kv", a1), vs, as, false));
      }
      v = ops::add(v2, net.ffn(fv + ".ffn", net.ln(fv + ".ln_ffn", v2)));
    }
    a = ops::add(a2, net.ffn(fa + ".ffn", net.ln(fa + ".ln_ffn", a2)));
  }

  Var fused;
  if (route.use_video) {
    Var ctx = net.mha("merge.ca", net.ln("merge.ln_q", a), net.ln("merge.ln_kv", v), as, vs, false);
    fused = net.proj("merge.proj", ops::concat({a, ctx}, 1));
  } else {
    // The cross-attention context is absent; only the audio half of the
    // merge projection is read.
    Var w = ops::slice(net.p("merge.proj.weight"), 0, 0, static_cast<std::size_t>(c.d_model));
    fused = ops::linear(a, w, net.p("merge.proj.bias"));
  }
  out.taps["fusion_out"] = {fused, as};

  Var h = fused;
  const std::vector<int> ctc_blocks = c.ctc_tap_blocks();
  out.ctc_tap_blocks = ctc_blocks;
  out.ctc_segments = as;
  Var joint_out;
  for (int i = 1; i <= c.n_joint_blocks; ++i) {
    h = net.encoder_block(idx("joint.block", i), h, as);
    if (i == c.joint_mid_block()) out.taps["joint_mid"] = {h, as};
    if (std::find(ctc_blocks.begin(), ctc_blocks.end(), i) != ctc_blocks.end()) {
      Var hn = net.ln(idx("joint.ln", i), h);
      out.ctc_logits.push_back(net.proj("ctc", hn));
      if (i == c.n_joint_blocks) joint_out = hn;
    }
  }
  out.taps["joint_out"] = {joint_out, as};
  out.memory = joint_out;

  if (with_targets) {
    std::vector<int> inputs;
    for (const auto& y : batch.labels) {
      if (y.empty()) throw ContractError("forward: empty label sequence");
      out.decoder_segments.push(y.size() + 1);
      inputs.push_back(c.sos_eos());
      for (int t : y) {
        if (t < 1 || t > c.vocab_size()) throw ContractError("forward: label id " + std::to_string(t) + " out of range");
        inputs.push_back(t);
        out.decoder_targets.push_back(t);
      }
      out.decoder_targets.push_back(c.sos_eos());
    }
    check_lengths(out.decoder_segments, c.max_len, "target");
    out.decoder_logits = net.decoder(joint_out, as, inputs, out.decoder_segments);
  }
  return out;
}

}  // namespace

ForwardOutput forward_full(Model& model, Tape& tape, const Batch& batch, bool with_targets) {
  return run(model, tape, batch, with_targets, {model.flow.video_enabled, model.flow.audio_to_video, false});
}

ForwardOutput forward_audio_only(Model& model, Tape& tape, const Batch& batch, bool with_targets) {
  if (!model.adapters) throw StateError("forward_audio_only: no adapters attached");
  return run(model, tape, batch, with_targets, {false, false, true});
}

ForwardOutput forward(Model& model, Tape& tape, const Batch& batch, bool with_targets) {
  return model.adapter_active ? forward_audio_only(model, tape, batch, with_targets)
                              : forward_full(model, tape, batch, with_targets);
}

Var decoder_next_logits(Model& model, Tape& tape, const ForwardOutput& encoded,
                        const std::vector<std::vector<int>>& prefixes, const std::vector<std::size_t>& owner,
                        bool audio_path) {
  if (prefixes.size() != owner.size() || prefixes.empty()) throw ContractError("decoder_next_logits: bad prefix set");
  Net net(model, tape, audio_path);
  const auto& ms = encoded.ctc_segments;
  std::vector<int> mem_rows, ids, last_rows;
  ops::Segments mem_segs, segs;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const std::size_t o = owner[i];
    if (o >= ms.count() || prefixes[i].empty()) throw ContractError("decoder_next_logits: bad owner or prefix");
    for (std::size_t r = 0; r < ms.length(o); ++r) mem_rows.push_back(static_cast<int>(ms.begin(o) + r));
    mem_segs.push(ms.length(o));
    ids.insert(ids.end(), prefixes[i].begin(), prefixes[i].end());
    segs.push(prefixes[i].size());
    last_rows.push_back(static_cast<int>(segs.total() - 1));
  }
  check_lengths(segs, model.config.max_len, "prefix");
  Var memory = ops::embedding(encoded.memory, mem_rows);
  Var logits = net.decoder(memory, mem_segs, ids, segs);
  return ops::embedding(logits, last_rows);
}

// ---------------------------------------------------------------- accounting

FlopsParams count_flops_params(const Model& model, ComputePath path, const FlopInputs& in) {
  const auto& c = model.config;
  const std::uint64_t d = static_cast<std::uint64_t>(c.d_model), f = static_cast<std::uint64_t>(c.d_ffn);
  const std::uint64_t ta = in.audio_frames, tv = in.video_frames, ld = in.target_len;
  const bool audio_only = path == ComputePath::audio_only;
  const bool use_video = !audio_only && model.flow.video_enabled;
  const bool a2v = model.flow.audio_to_video;
  const bool adapters = audio_only && model.adapters.has_value();
  const std::uint64_t r = adapters ? static_cast<std::uint64_t>(model.adapters->rank) : 0;
  const bool dec_adapters = adapters && model.adapters->insert_part == InsertPart::encoder_and_decoder;

  auto lin = [](std::uint64_t t, std::uint64_t i, std::uint64_t o) { return 2 * t * i * o; };
  auto attn_core = [d](std::uint64_t tq, std::uint64_t tk) { return 4 * tq * tk * d; };
  // Projections of q (tq rows) and k/v (tk rows), output (tq rows), plus core.
  auto mha = [&](std::uint64_t tq, std::uint64_t tk, bool adapted) {
    std::uint64_t n = lin(tq, d, d) * 2 + lin(tk, d, d) * 2 + attn_core(tq, tk);
    if (adapted) n += 4 * (2 * tq + 2 * tk) * d * r;
    return n;
  };
  auto ffn = [&](std::uint64_t t) { return lin(t, d, f) + lin(t, f, d); };

  std::uint64_t flops = lin(ta, static_cast<std::uint64_t>(c.audio_dim), d);
  for (int i = 0; i < c.n_audio_blocks; ++i) flops += mha(ta, ta, adapters) + ffn(ta);
  if (use_video) {
    flops += lin(tv, static_cast<std::uint64_t>(c.video_dim), d);
    for (int i = 0; i < c.n_video_blocks; ++i) flops += mha(tv, tv, false) + ffn(tv);
  }
  for (int j = 0; j < c.n_fusion_blocks; ++j) {
    flops += mha(ta, ta, adapters) + ffn(ta);
    if (use_video) {
      flops += mha(tv, tv, false) + ffn(tv) + mha(ta, tv, false);
      if (a2v) flops += mha(tv, ta, false);
    }
  }
  flops += use_video ? mha(ta, tv, false) + lin(ta, 2 * d, d) : lin(ta, d, d);
  for (int i = 0; i < c.n_joint_blocks; ++i) flops += mha(ta, ta, adapters) + ffn(ta);
  flops += c.ctc_tap_blocks().size() * lin(ta, d, static_cast<std::uint64_t>(c.vocab_size_with_blank));
  for (int i = 0; i < c.n_decoder_blocks; ++i) flops += mha(ld, ld, dec_adapters) + mha(ld, ta, false) + ffn(ld);
  flops += lin(ld, d, static_cast<std::uint64_t>(c.decoder_vocab()));

  FlopsParams out;
  out.flops = flops;
  for (const auto& [name, p] : model.params.items()) {
    if (is_adapter_tensor(name)) {
      if (adapters) out.params += p.value.numel();
      continue;
    }
    const bool video_side = starts_with(name, "video.") || name.find(".video.") != std::string::npos ||
                            (starts_with(name, "fusion") && (name.find(".audio.ca.") != std::string::npos ||
                                                             name.find(".audio.ln_ca") != std::string::npos)) ||
                            starts_with(name, "merge.ca.") || starts_with(name, "merge.ln_");
    if (!use_video && video_side) continue;
    if (use_video && !a2v && starts_with(name, "fusion") &&
        (name.find(".video.ca.") != std::string::npos || name.find(".video.ln_ca") != std::string::npos)) {
      continue;
    }
    if (!use_video && name == "merge.proj.weight") {
      out.params += d * d;
      continue;
    }
    out.params += p.value.numel();
  }
  return out;
}

}  // namespace mblab
