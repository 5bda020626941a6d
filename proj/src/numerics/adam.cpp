#include "mblab/numerics/adam.hpp"

#include <cmath>

#include "mblab/errors.hpp"

namespace mblab {

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long step, const AdamConfig& cfg,
                 double learning_rate) {
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape()) {
    throw ContractError("adam: shape mismatch between parameter " + shape_str(param.shape()) + " and grad/moments " +
                        shape_str(grad.shape()));
  }
  if (step < 1) throw ContractError("adam: step must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void adam_step(ParameterStore& params, AdamState& state, double learning_rate) {
  if (state.step < 0) throw ContractError("adam: negative step counter");
  const long step = state.step + 1;
  for (auto& [name, p] : params.items()) {
    if (p.frozen) continue;
    auto [mit, mnew] = state.first_moment.try_emplace(name, p.value.shape(), 0.0);
    auto [vit, vnew] = state.second_moment.try_emplace(name, p.value.shape(), 0.0);
    adam_update(p.value, p.grad, mit->second, vit->second, step, state.config, learning_rate);
  }
  state.step = step;
}

}  // namespace mblab
