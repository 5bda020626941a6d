#include "mblab/numerics/parameter.hpp"

#include <cstring>

#include "mblab/errors.hpp"

namespace mblab {

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

Parameter& ParameterStore::add(const std::string& name, Tensor value) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw StateError("duplicate parameter name: " + name);
  it->second.grad = Tensor(value.shape(), 0.0);
  it->second.value = std::move(value);
  return it->second;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::erase_prefix(const std::string& prefix) {
  std::size_t n = 0;
  for (auto it = params_.begin(); it != params_.end();) {
    if (starts_with(it->first, prefix)) {
      it = params_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor(p.value.shape(), 0.0);
    } else {
      p.grad.fill(0.0);
    }
  }
}

void ParameterStore::set_frozen(const std::function<bool(const std::string&)>& pred, bool frozen) {
  for (auto& [name, p] : params_) {
    if (pred(name)) p.frozen = frozen;
  }
}

std::size_t ParameterStore::count_values(const std::function<bool(const std::string&)>& pred) const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) {
    if (!pred || pred(name)) n += p.value.numel();
  }
  return n;
}

void ParameterStore::round_to_f32() {
  for (auto& [name, p] : params_) {
    for (auto& v : p.value.storage()) v = static_cast<double>(static_cast<float>(v));
  }
}

std::uint64_t ParameterStore::checksum(const std::function<bool(const std::string&)>& pred) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, p] : params_) {
    if (pred && !pred(name)) continue;
    mix(name.data(), name.size());
    mix(p.value.ptr(), p.value.numel() * sizeof(double));
  }
  return h;
}

}  // namespace mblab
