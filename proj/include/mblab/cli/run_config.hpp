#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mblab/corpus/corpus.hpp"
#include "mblab/evaluation/evaluation.hpp"
#include "mblab/model/model.hpp"
#include "mblab/training/training.hpp"

namespace mblab {

// Flat `section.key = value` configuration. Every key has a default; unknown
// keys are rejected. Values are kept as text and converted on read.
class RunConfig {
 public:
  RunConfig();

  // Throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  // Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
  void merge_text(const std::string& text);
  void merge_file(const std::string& path);
  // Sorted `key = value` lines; feeding this back reproduces the config.
  std::string to_text() const;

  long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  // Comma-separated; empty text gives an empty list.
  std::vector<std::string> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

CorpusSpec corpus_spec_from(const RunConfig& c);
// Dimensions and vocabulary follow the corpus spec; the rest from model.*.
ModelConfig model_config_from(const RunConfig& c, const CorpusSpec& spec);
AdapterConfig adapter_config_from(const RunConfig& c);
DecodeConfig decode_config_from(const RunConfig& c);
FlopInputs flop_inputs_from(const RunConfig& c);
// train.* keys set to "auto" take the recipe-kind default.
TrainRecipe recipe_from(const RunConfig& c, RecipeKind kind);
// Writes the recipe's effective values back as train.* keys.
void store_recipe(RunConfig& c, const TrainRecipe& r);

}  // namespace mblab
