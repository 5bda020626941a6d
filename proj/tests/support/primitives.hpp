#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mblab/numerics/ops.hpp"

namespace mblab::testing {

namespace o = mblab::ops;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  return t;
}

// sum(weights ⊙ y): a scalar whose gradient w.r.t. y is `weights`.
inline Var weighted_sum(Tape& tape, Var y, const Tensor& weights) {
  return o::sum(o::mul(y, tape.constant(weights.reshaped(y.shape()))));
}

inline o::Segments segments_of(std::initializer_list<std::size_t> lengths) {
  o::Segments s;
  for (auto l : lengths) s.push(l);
  return s;
}

struct PrimitiveCase {
  std::string name;
  std::vector<Shape> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> apply;
};

// One case per differentiable primitive, with input shapes.
inline std::vector<PrimitiveCase> primitive_cases() {
  static const std::vector<int> ids{2, 0, 3, 2};
  static const std::vector<int> picks{1, 0, 2};
  const o::Segments qs = segments_of({3, 2});
  const o::Segments ks = segments_of({2, 4});
  const o::Segments cs = segments_of({3, 2});
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, const auto& x) { return o::matmul(x[0], x[1]); }},
      {"transpose", {{3, 4}}, [](Tape&, const auto& x) { return o::transpose(x[0]); }},
      {"add", {{2, 3}, {2, 3}}, [](Tape&, const auto& x) { return o::add(x[0], x[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](Tape&, const auto& x) { return o::sub(x[0], x[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](Tape&, const auto& x) { return o::mul(x[0], x[1]); }},
      {"scale", {{2, 3}}, [](Tape&, const auto& x) { return o::scale(x[0], -1.7); }},
      {"add_bias", {{3, 4}, {4}}, [](Tape&, const auto& x) { return o::add_bias(x[0], x[1]); }},
      {"softmax", {{3, 5}}, [](Tape&, const auto& x) { return o::softmax(x[0]); }},
      {"log_softmax", {{3, 5}}, [](Tape&, const auto& x) { return o::log_softmax(x[0]); }},
      {"layer_norm", {{3, 6}}, [](Tape&, const auto& x) { return o::layer_norm(x[0]); }},
      {"layer_norm_affine", {{3, 6}, {6}, {6}},
       [](Tape&, const auto& x) { return o::layer_norm(x[0], x[1], x[2]); }},
      {"gelu", {{3, 4}}, [](Tape&, const auto& x) { return o::gelu(x[0]); }},
      {"embedding", {{4, 3}}, [](Tape&, const auto& x) { return o::embedding(x[0], ids); }},
      {"concat0", {{2, 3}, {1, 3}}, [](Tape&, const auto& x) { return o::concat({x[0], x[1]}, 0); }},
      {"concat1", {{2, 3}, {2, 2}}, [](Tape&, const auto& x) { return o::concat({x[0], x[1]}, 1); }},
      {"slice", {{4, 5}}, [](Tape&, const auto& x) { return o::slice(o::slice(x[0], 0, 1, 3), 1, 2, 5); }},
      {"masked_fill", {{2, 3}},
       [](Tape&, const auto& x) { return o::masked_fill(x[0], {true, false, false, true, false, false}, 0.0); }},
      {"mean", {{2, 3}}, [](Tape&, const auto& x) { return o::mean(x[0]); }},
      {"row_sum", {{3, 4}}, [](Tape&, const auto& x) { return o::row_sum(x[0]); }},
      {"pick", {{3, 4}}, [](Tape&, const auto& x) { return o::pick(x[0], picks); }},
      {"attention", {{5, 4}, {6, 4}, {6, 4}},
       [qs, ks](Tape&, const auto& x) { return o::segment_attention(x[0], x[1], x[2], qs, ks, 2, false); }},
      {"attention_causal", {{5, 4}, {5, 4}, {5, 4}},
       [cs](Tape&, const auto& x) { return o::segment_attention(x[0], x[1], x[2], cs, cs, 2, true); }},
  };
}

}  // namespace mblab::testing
