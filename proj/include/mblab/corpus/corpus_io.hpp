#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "mblab/corpus/corpus.hpp"

namespace mblab {

// File layout: "MBLABCO1", u32 LE manifest length, JSON manifest
// {spec, utterance_index: [{id, label_len, audio_offset, video_offset,
// label_offset}]}, then the blob. Offsets are relative to the blob start.
// Frames are f32 LE row-major, labels u16 LE.
inline constexpr std::string_view kCorpusMagic = "MBLABCO1";

nlohmann::json corpus_spec_to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

std::string encode_corpus(const Corpus& corpus);
// Throws FormatError (with byte offset) on malformed input.
Corpus decode_corpus(std::string_view bytes);

void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& path);

// Content id: FNV-1a of the encoded bytes, as 16 hex digits.
std::string corpus_id(const Corpus& corpus);

}  // namespace mblab
