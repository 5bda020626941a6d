#include <cstring>

#include "mblab/errors.hpp"
#include "mblab/model/model.hpp"
#include "mblab/util/bytes.hpp"

namespace mblab {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "MBLABCK1";

json flow_to_json(const FlowFlags& f) {
  return json{{"video_enabled", f.video_enabled}, {"audio_to_video", f.audio_to_video}};
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return json{{"audio_dim", c.audio_dim},
              {"video_dim", c.video_dim},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"d_ffn", c.d_ffn},
              {"n_audio_blocks", c.n_audio_blocks},
              {"n_video_blocks", c.n_video_blocks},
              {"n_fusion_blocks", c.n_fusion_blocks},
              {"n_joint_blocks", c.n_joint_blocks},
              {"n_decoder_blocks", c.n_decoder_blocks},
              {"vocab_size_with_blank", c.vocab_size_with_blank},
              {"max_len", c.max_len},
              {"intermediate_ctc_taps", c.intermediate_ctc_taps}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.audio_dim = j.at("audio_dim").get<int>();
  c.video_dim = j.at("video_dim").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ffn = j.at("d_ffn").get<int>();
  c.n_audio_blocks = j.at("n_audio_blocks").get<int>();
  c.n_video_blocks = j.at("n_video_blocks").get<int>();
  c.n_fusion_blocks = j.at("n_fusion_blocks").get<int>();
  c.n_joint_blocks = j.at("n_joint_blocks").get<int>();
  c.n_decoder_blocks = j.at("n_decoder_blocks").get<int>();
  c.vocab_size_with_blank = j.at("vocab_size_with_blank").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.intermediate_ctc_taps = j.at("intermediate_ctc_taps").get<std::vector<int>>();
  return c;
}

std::string encode_checkpoint(Model& model) {
  model.params.round_to_f32();
  std::string blob;
  json tensors = json::array();
  for (const auto& [name, p] : model.params.items()) {
    tensors.push_back(json{{"name", name}, {"shape", p.value.shape()}, {"dtype", "f32"}, {"offset", blob.size()}});
    for (double v : p.value.data()) put_f32(blob, static_cast<float>(v));
  }
  json manifest{{"config", model_config_to_json(model.config)},
                {"flow", flow_to_json(model.flow)},
                {"provenance",
                 {{"recipe", model.provenance.recipe},
                  {"seed", model.provenance.seed},
                  {"parent", model.provenance.parent}}},
                {"tensors", std::move(tensors)}};
  if (model.adapters) {
    manifest["adapter"] = {{"rank", model.adapters->rank},
                           {"insert_part", to_string(model.adapters->insert_part)},
                           {"scale", model.adapters->scale},
                           {"active", model.adapter_active}};
  }
  const std::string text = manifest.dump();
  std::string out(kMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += blob;
  return out;
}

namespace {

struct Parsed {
  json manifest;
  std::size_t manifest_at = 0;
  std::size_t blob_start = 0;
};

Parsed parse(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.size() < kMagic.size() || r.take(kMagic.size(), "magic") != kMagic) {
    throw FormatError("bad checkpoint magic", 0);
  }
  Parsed p;
  const std::size_t len = r.u32();
  p.manifest_at = r.offset();
  const std::string_view text = r.take(len, "manifest");
  p.blob_start = r.offset();
  try {
    p.manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid checkpoint manifest: ") + e.what(), p.manifest_at);
  }
  return p;
}

void fill_tensors(Model& model, std::string_view bytes, const Parsed& p) {
  std::size_t seen = 0;
  try {
    for (const auto& entry : p.manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw FormatError("tensor '" + name + "' has unsupported dtype", p.manifest_at);
      }
      if (!model.params.contains(name)) {
        throw FormatError("tensor '" + name + "' does not exist in the target model", p.manifest_at);
      }
      Parameter& param = model.params.get(name);
      if (param.value.shape() != shape) {
        throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                              shape_str(param.value.shape()),
                          p.manifest_at);
      }
      ByteReader r(bytes);
      r.seek(p.blob_start + offset, name.c_str());
      for (double& v : param.value.storage()) v = r.f32();
      ++seen;
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid tensor table: ") + e.what(), p.manifest_at);
  }
  if (seen != model.params.size()) {
    for (const auto& [name, param] : model.params.items()) {
      bool found = false;
      for (const auto& entry : p.manifest.at("tensors")) found = found || entry.at("name") == name;
      if (!found) throw FormatError("tensor '" + name + "' missing from checkpoint", p.manifest_at);
    }
  }
}

}  // namespace

Model decode_checkpoint(std::string_view bytes) {
  const Parsed p = parse(bytes);
  Model model;
  try {
    const ModelConfig config = model_config_from_json(p.manifest.at("config"));
    config.validate();
    model = build_model(config, 0);
    const auto& flow = p.manifest.at("flow");
    model.flow.video_enabled = flow.at("video_enabled").get<bool>();
    model.flow.audio_to_video = flow.at("audio_to_video").get<bool>();
    const auto& prov = p.manifest.at("provenance");
    model.provenance.recipe = prov.at("recipe").get<std::string>();
    model.provenance.seed = prov.at("seed").get<std::uint64_t>();
    model.provenance.parent = prov.at("parent").get<std::string>();
    if (p.manifest.contains("adapter")) {
      const auto& a = p.manifest.at("adapter");
      AdapterConfig ac;
      ac.rank = a.at("rank").get<int>();
      ac.insert_part = parse_insert_part(a.at("insert_part").get<std::string>());
      ac.scale = a.at("scale").get<double>();
      insert_adapters(model, ac);
      model.adapter_active = a.at("active").get<bool>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid checkpoint manifest: ") + e.what(), p.manifest_at);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), p.manifest_at);
  }
  fill_tensors(model, bytes, p);
  return model;
}

void load_checkpoint_into(Model& model, std::string_view bytes) { fill_tensors(model, bytes, parse(bytes)); }

void save_checkpoint(const std::filesystem::path& path, Model& model) { write_file(path, encode_checkpoint(model)); }

Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string checkpoint_id(Model& model) { return hex64(fnv1a64(encode_checkpoint(model))); }

}  // namespace mblab
