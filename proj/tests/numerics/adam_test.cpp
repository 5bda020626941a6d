#include <gtest/gtest.h>

#include "mblab/errors.hpp"
#include "mblab/numerics/adam.hpp"

using namespace mblab;

TEST(Adam, FirstStepWithUnitGradient) {
  // m1 = 0.1, v1 = 0.001; bias-corrected both become 1, so the update is
  // -lr * 1 / (1 + eps).
  ParameterStore store;
  auto& p = store.add("w", Tensor::vector({0.5}));
  p.grad = Tensor::vector({1.0});
  AdamState state;
  adam_step(store, state, 1e-3);
  EXPECT_EQ(state.step, 1);
  EXPECT_NEAR(p.value[0] - 0.5, -1e-3, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  ParameterStore store;
  auto& p = store.add("w", Tensor::vector({0.25, -1.0}));
  store.zero_grad();
  AdamState state;
  adam_step(store, state);
  EXPECT_EQ(p.value[0], 0.25);
  EXPECT_EQ(p.value[1], -1.0);
}

TEST(Adam, CarriedStateIsDeterministic) {
  auto run = []() {
    ParameterStore store;
    auto& p = store.add("w", Tensor::vector({0.5, 2.0}));
    AdamState state;
    for (int i = 0; i < 2; ++i) {
      p.grad = Tensor::vector({0.3, -0.2});
      adam_step(store, state);
    }
    return p.value;
  };
  const Tensor a = run();
  const Tensor b = run();
  EXPECT_TRUE(bitwise_equal(a, b));

  // Two explicit steps through the single-tensor API give the same bits.
  Tensor w = Tensor::vector({0.5, 2.0});
  Tensor g = Tensor::vector({0.3, -0.2});
  Tensor m({2}), v({2});
  adam_update(w, g, m, v, 1, AdamConfig{}, 1e-3);
  adam_update(w, g, m, v, 2, AdamConfig{}, 1e-3);
  EXPECT_TRUE(bitwise_equal(a, w));
}

TEST(Adam, StepCounterIncrementsByOne) {
  ParameterStore store;
  store.add("w", Tensor::vector({1.0}));
  AdamState state;
  for (long i = 1; i <= 5; ++i) {
    adam_step(store, state);
    EXPECT_EQ(state.step, i);
  }
}

TEST(Adam, FrozenParametersAreSkipped) {
  ParameterStore store;
  auto& p = store.add("w", Tensor::vector({1.0}));
  p.frozen = true;
  p.grad = Tensor::vector({5.0});
  AdamState state;
  adam_step(store, state);
  EXPECT_EQ(p.value[0], 1.0);
  EXPECT_TRUE(state.first_moment.empty());
}

TEST(Adam, ShapeMismatchIsContractError) {
  Tensor w({2}), g({3}), m({2}), v({2});
  EXPECT_THROW(adam_update(w, g, m, v, 1, AdamConfig{}, 1e-3), ContractError);
}
