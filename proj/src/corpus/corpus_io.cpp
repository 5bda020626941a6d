#include "mblab/corpus/corpus_io.hpp"

#include "mblab/errors.hpp"
#include "mblab/util/bytes.hpp"

namespace mblab {

using nlohmann::json;

json corpus_spec_to_json(const CorpusSpec& s) {
  return json{{"vocab_size", s.vocab_size},
              {"n_general", s.n_general},
              {"n_audio_pairs", s.n_audio_pairs},
              {"n_video_pairs", s.n_video_pairs},
              {"frames_per_token_audio", s.frames_per_token_audio},
              {"frames_per_token_video", s.frames_per_token_video},
              {"audio_dim", s.audio_dim},
              {"video_dim", s.video_dim},
              {"audio_noise", s.audio_noise},
              {"video_noise", s.video_noise},
              {"prototype_scale", s.prototype_scale},
              {"min_len", s.min_len},
              {"max_len", s.max_len},
              {"n_utterances", s.n_utterances},
              {"seed", s.seed},
              {"split", s.split}};
}

CorpusSpec corpus_spec_from_json(const json& j) {
  CorpusSpec s;
  s.vocab_size = j.at("vocab_size").get<int>();
  s.n_general = j.at("n_general").get<int>();
  s.n_audio_pairs = j.at("n_audio_pairs").get<int>();
  s.n_video_pairs = j.at("n_video_pairs").get<int>();
  s.frames_per_token_audio = j.at("frames_per_token_audio").get<int>();
  s.frames_per_token_video = j.at("frames_per_token_video").get<int>();
  s.audio_dim = j.at("audio_dim").get<int>();
  s.video_dim = j.at("video_dim").get<int>();
  s.audio_noise = j.at("audio_noise").get<double>();
  s.video_noise = j.at("video_noise").get<double>();
  s.prototype_scale = j.at("prototype_scale").get<double>();
  s.min_len = j.at("min_len").get<int>();
  s.max_len = j.at("max_len").get<int>();
  s.n_utterances = j.at("n_utterances").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.split = j.at("split").get<std::string>();
  return s;
}

std::string encode_corpus(const Corpus& corpus) {
  std::string blob;
  json index = json::array();
  for (const auto& u : corpus.utterances) {
    json entry{{"id", u.id}, {"label_len", u.labels.size()}};
    entry["audio_offset"] = blob.size();
    for (double v : u.audio.data()) put_f32(blob, static_cast<float>(v));
    entry["video_offset"] = blob.size();
    for (double v : u.video.data()) put_f32(blob, static_cast<float>(v));
    entry["label_offset"] = blob.size();
    for (int t : u.labels) put_u16(blob, static_cast<std::uint16_t>(t));
    index.push_back(std::move(entry));
  }
  const json manifest{{"spec", corpus_spec_to_json(corpus.spec)}, {"utterance_index", std::move(index)}};
  const std::string text = manifest.dump();
  std::string out(kCorpusMagic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += blob;
  return out;
}

namespace {

Tensor read_stream(ByteReader& r, std::size_t blob_start, std::size_t offset, std::size_t rows, std::size_t cols,
                   const char* what) {
  r.seek(blob_start + offset, what);
  Tensor t({rows, cols});
  for (double& v : t.storage()) v = r.f32();
  return t;
}

}  // namespace

Corpus decode_corpus(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.size() < kCorpusMagic.size() || r.take(kCorpusMagic.size(), "magic") != kCorpusMagic) {
    throw FormatError("bad corpus magic", 0);
  }
  const std::size_t manifest_len = r.u32();
  const std::size_t manifest_at = r.offset();
  const std::string_view text = r.take(manifest_len, "manifest");
  const std::size_t blob_start = r.offset();

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid corpus manifest: ") + e.what(), manifest_at);
  }

  Corpus corpus;
  try {
    corpus.spec = corpus_spec_from_json(manifest.at("spec"));
    corpus.spec.validate();
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid corpus spec in manifest: ") + e.what(), manifest_at);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), manifest_at);
  }

  const auto& spec = corpus.spec;
  const auto fa = static_cast<std::size_t>(spec.frames_per_token_audio);
  const auto fv = static_cast<std::size_t>(spec.frames_per_token_video);
  try {
    for (const auto& entry : manifest.at("utterance_index")) {
      Utterance u;
      u.id = entry.at("id").get<std::uint32_t>();
      const auto len = entry.at("label_len").get<std::size_t>();
      if (len == 0) throw FormatError("utterance " + std::to_string(u.id) + " has empty label", manifest_at);
      u.audio = read_stream(r, blob_start, entry.at("audio_offset").get<std::size_t>(), len * fa,
                            static_cast<std::size_t>(spec.audio_dim), "audio");
      u.video = read_stream(r, blob_start, entry.at("video_offset").get<std::size_t>(), len * fv,
                            static_cast<std::size_t>(spec.video_dim), "video");
      r.seek(blob_start + entry.at("label_offset").get<std::size_t>(), "label");
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t at = r.offset();
        const int t = r.u16();
        if (t < 1 || t > spec.vocab_size) throw FormatError("label id " + std::to_string(t) + " out of range", at);
        u.labels.push_back(t);
      }
      u.natural_video_mask.assign(len * fv, true);
      corpus.utterances.push_back(std::move(u));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid utterance index: ") + e.what(), manifest_at);
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) { write_file(path, encode_corpus(corpus)); }

Corpus read_corpus(const std::filesystem::path& path) { return decode_corpus(read_file(path)); }

std::string corpus_id(const Corpus& corpus) { return hex64(fnv1a64(encode_corpus(corpus))); }

}  // namespace mblab
