#pragma once

#include <map>
#include <string>

#include "mblab/numerics/parameter.hpp"

namespace mblab {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

// One bias-corrected Adam update of a single tensor; `step` is the 1-based
// step number after increment.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long step, const AdamConfig& cfg,
                 double learning_rate);

// Applies one Adam step to every non-frozen parameter of the store using its
// accumulated grad. Increments state.step by exactly one.
void adam_step(ParameterStore& params, AdamState& state, double learning_rate);
inline void adam_step(ParameterStore& params, AdamState& state) {
  adam_step(params, state, state.config.learning_rate);
}

}  // namespace mblab
