#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "mblab/numerics/tensor.hpp"

namespace mblab {

struct Parameter {
  Tensor value;
  Tensor grad;
  bool frozen = false;
};

// Named parameters in lexicographic order. Iteration order is the serialization
// and optimizer order, so it must not depend on insertion order.
class ParameterStore {
 public:
  using Map = std::map<std::string, Parameter>;

  Parameter& add(const std::string& name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t erase_prefix(const std::string& prefix);

  Map& items() { return params_; }
  const Map& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  void set_frozen(const std::function<bool(const std::string&)>& pred, bool frozen);

  std::size_t count_values(const std::function<bool(const std::string&)>& pred = {}) const;
  // Rounds every value to the nearest float32 (checkpoint storage precision).
  void round_to_f32();
  // FNV-1a over names and value bits.
  std::uint64_t checksum(const std::function<bool(const std::string&)>& pred = {}) const;

 private:
  Map params_;
};

bool starts_with(const std::string& s, const std::string& prefix);

}  // namespace mblab
