#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "../support/primitives.hpp"
#include "mblab/errors.hpp"
#include "mblab/numerics/gradcheck.hpp"
#include "mblab/numerics/ops.hpp"

using namespace mblab;
namespace o = mblab::ops;
using mblab::testing::primitive_cases;
using mblab::testing::random_tensor;
using mblab::testing::segments_of;
using mblab::testing::weighted_sum;

namespace {

// Attention assembled from elementary primitives, one segment/head at a time.
Var composed_attention(Var q, Var k, Var v, const o::Segments& qs, const o::Segments& ks,
                       std::size_t heads, bool causal) {
  const std::size_t d = q.cols(), dh = d / heads;
  std::vector<Var> seg_out;
  for (std::size_t s = 0; s < qs.count(); ++s) {
    Var qseg = o::slice(q, 0, qs.begin(s), qs.begin(s) + qs.length(s));
    Var kseg = o::slice(k, 0, ks.begin(s), ks.begin(s) + ks.length(s));
    Var vseg = o::slice(v, 0, ks.begin(s), ks.begin(s) + ks.length(s));
    std::vector<Var> head_out;
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = o::slice(qseg, 1, h * dh, (h + 1) * dh);
      Var kh = o::slice(kseg, 1, h * dh, (h + 1) * dh);
      Var vh = o::slice(vseg, 1, h * dh, (h + 1) * dh);
      Var scores = o::scale(o::matmul(qh, o::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
      if (causal) {
        std::vector<bool> mask(scores.value().numel());
        const std::size_t n = scores.cols();
        for (std::size_t i = 0; i < scores.rows(); ++i)
          for (std::size_t j = i + 1; j < n; ++j) mask[i * n + j] = true;
        scores = o::masked_fill(scores, mask, -1e30);
      }
      head_out.push_back(o::matmul(o::softmax(scores), vh));
    }
    seg_out.push_back(o::concat(head_out, 1));
  }
  return o::concat(seg_out, 0);
}

}  // namespace

TEST(Evaluate, SoftmaxOfZerosIsUniform) {
  Tape tape;
  Var y = o::softmax(tape.constant(Tensor::vector({0, 0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
}

TEST(Evaluate, MatmulHandArithmetic) {
  Tape tape;
  Var y = o::matmul(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), tape.constant(Tensor::matrix({{1}, {1}})));
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(y.value()[0], 3.0);
  EXPECT_DOUBLE_EQ(y.value()[1], 7.0);
}

TEST(Evaluate, LayerNormOfConstantIsZero) {
  Tape tape;
  Var y = o::layer_norm(tape.constant(Tensor::vector({5, 5, 5, 5})));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Evaluate, ShapeMismatchNamesPrimitive) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  try {
    o::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
  EXPECT_THROW(o::add(a, tape.constant(Tensor({3, 2}))), DimensionError);
  EXPECT_THROW(o::segment_attention(a, a, a, segments_of({2}), segments_of({2}), 2, false), DimensionError);
}

TEST(Evaluate, NonFiniteOutputIsNumericError) {
  Tape tape;
  Var a = tape.constant(Tensor::vector({1e308, 1e308}));
  EXPECT_THROW(o::scale(a, 10.0), NumericError);
}

TEST(Evaluate, SoftmaxNormalizationAndLogConsistency) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    Var x = tape.constant(random_tensor(rng, {4, 7}, -20, 20));
    const Tensor& p = o::softmax(x).value();
    const Tensor& lp = o::log_softmax(x).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        s += p.at(r, c);
        if (p.at(r, c) > 0.0) {
          EXPECT_NEAR(lp.at(r, c), std::log(p.at(r, c)), 1e-9);
        }
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Evaluate, DeterministicBitIdentical) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor(rng, {6, 8});
  const Tensor w = random_tensor(rng, {8, 8});
  auto run = [&]() {
    Tape tape;
    Var y = o::gelu(o::layer_norm(o::matmul(tape.constant(a), tape.constant(w))));
    return y.value();
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.input(Tensor::vector({1, 2}));
  tape.backward(o::sum(o::mul(x, x)));
  const Tensor* g = tape.grad(x);
  ASSERT_NE(g, nullptr);
  EXPECT_DOUBLE_EQ((*g)[0], 2.0);
  EXPECT_DOUBLE_EQ((*g)[1], 4.0);
}

TEST(Backward, CrossEntropyAtZeroLogits) {
  Tape tape;
  Var logits = tape.input(Tensor::matrix({{0, 0}}));
  const std::vector<int> target{0};
  tape.backward(o::scale(o::sum(o::pick(o::log_softmax(logits), target)), -1.0));
  const Tensor* g = tape.grad(logits);
  EXPECT_DOUBLE_EQ((*g)[0], -0.5);
  EXPECT_DOUBLE_EQ((*g)[1], 0.5);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  Var x = tape.input(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(o::scale(x, 2.0)), ContractError);
}

TEST(Backward, UnreachableParametersGetZeroGradient) {
  ParameterStore store;
  Parameter& used = store.add("used", Tensor::vector({1.0, 2.0}));
  store.add("unused", Tensor::vector({3.0}));
  store.zero_grad();
  Tape tape;
  Var x = tape.param(used);
  tape.backward(o::sum(o::mul(x, x)));
  EXPECT_EQ(store.get("unused").grad.shape(), (Shape{1}));
  EXPECT_EQ(store.get("unused").grad[0], 0.0);
  EXPECT_EQ(store.get("used").grad[1], 4.0);
}

TEST(Backward, FrozenParameterReceivesNothing) {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor::vector({1.0, 2.0}));
  w.frozen = true;
  store.zero_grad();
  Tape tape;
  Var x = tape.param(w);
  Var y = o::sum(o::mul(x, x));
  EXPECT_FALSE(tape.needs_grad(y));
  tape.backward(y);
  EXPECT_EQ(w.grad[0], 0.0);
}

// Every primitive against central differences over 100 random probes.
TEST(Backward, EveryPrimitiveMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (const auto& pc : primitive_cases()) {
    double worst = 0.0;
    for (int probe = 0; probe < 100; ++probe) {
      ParameterStore store;
      std::vector<Parameter*> inputs;
      for (std::size_t i = 0; i < pc.inputs.size(); ++i) {
        inputs.push_back(&store.add("in" + std::to_string(i), random_tensor(rng, pc.inputs[i], -2, 2)));
      }
      Tensor weights;
      auto loss = [&](Tape& tape) {
        std::vector<Var> xs;
        for (auto* p : inputs) xs.push_back(tape.param(*p));
        Var y = pc.apply(tape, xs);
        if (weights.empty()) weights = random_tensor(rng, y.shape());
        return weighted_sum(tape, y, weights);
      };
      const auto report = check_gradients(store, loss, 1e-4);
      worst = std::max(worst, report.max_rel_error);
    }
    EXPECT_LE(worst, 1e-4) << pc.name;
  }
}

TEST(Backward, RandomTwoLayerNetwork) {
  std::mt19937_64 rng(5);
  ParameterStore store;
  auto& w1 = store.add("w1", random_tensor(rng, {6, 10}));
  auto& b1 = store.add("b1", random_tensor(rng, {10}));
  auto& w2 = store.add("w2", random_tensor(rng, {10, 4}));
  auto& b2 = store.add("b2", random_tensor(rng, {4}));
  const Tensor x = random_tensor(rng, {5, 6});
  const std::vector<int> target{0, 3, 1, 2, 3};
  auto loss = [&](Tape& tape) {
    Var h = o::gelu(o::linear(tape.constant(x), tape.param(w1), tape.param(b1)));
    Var logits = o::linear(h, tape.param(w2), tape.param(b2));
    return o::scale(o::mean(o::pick(o::log_softmax(logits), target)), -1.0);
  };
  const auto report = check_gradients(store, loss, 1e-4);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
  EXPECT_EQ(report.entries.size(), 4u);
}

TEST(CheckGradients, LinearLayerAtTightTolerance) {
  std::mt19937_64 rng(9);
  ParameterStore store;
  auto& w = store.add("w", random_tensor(rng, {4, 3}));
  auto& b = store.add("b", random_tensor(rng, {3}));
  const Tensor x = random_tensor(rng, {5, 4});
  const Tensor wts = random_tensor(rng, {5, 3});
  auto loss = [&](Tape& tape) {
    return weighted_sum(tape, o::linear(tape.constant(x), tape.param(w), tape.param(b)), wts);
  };
  EXPECT_TRUE(check_gradients(store, loss, 1e-6).pass);
}

TEST(CheckGradients, AttentionBlock) {
  std::mt19937_64 rng(13);
  ParameterStore store;
  const std::size_t d = 8;
  for (const char* n : {"q", "k", "v", "o"}) store.add(std::string("w") + n, random_tensor(rng, {d, d}, -0.5, 0.5));
  auto& gamma = store.add("gamma", random_tensor(rng, {d}, 0.5, 1.5));
  auto& beta = store.add("beta", random_tensor(rng, {d}));
  const Tensor x = random_tensor(rng, {7, d});
  const Tensor wts = random_tensor(rng, {7, d});
  const o::Segments segs = segments_of({4, 3});
  auto loss = [&](Tape& tape) {
    Var in = tape.constant(x);
    Var h = o::layer_norm(in, tape.param(gamma), tape.param(beta));
    Var att = o::segment_attention(o::matmul(h, tape.param(store.get("wq"))), o::matmul(h, tape.param(store.get("wk"))),
                                   o::matmul(h, tape.param(store.get("wv"))), segs, segs, 2, false);
    return weighted_sum(tape, o::add(in, o::matmul(att, tape.param(store.get("wo")))), wts);
  };
  const auto report = check_gradients(store, loss, 1e-4);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

TEST(CheckGradients, CorruptedBackwardRuleFails) {
  ParameterStore store;
  auto& w = store.add("w", Tensor::vector({0.3, -0.7, 1.1}));
  // y = x^2 with a deliberately wrong derivative (x instead of 2x).
  auto bad_square = [](Var x) {
    Tensor out = x.value();
    for (auto& v : out.storage()) v = v * v;
    const std::size_t ix = x.id();
    return x.tape()->record("bad_square", std::move(out), {x}, [ix](Tape& t, const Tensor& g) {
      Tensor& gx = t.grad_ref(ix);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * t.value(ix)[i];
    });
  };
  auto loss = [&](Tape& tape) { return o::sum(bad_square(tape.param(w))); };
  const auto report = check_gradients(store, loss, 1e-4);
  EXPECT_FALSE(report.pass);
  EXPECT_GT(report.max_rel_error, 0.1);
}

TEST(Attention, FusedMatchesComposedPrimitives) {
  std::mt19937_64 rng(21);
  for (bool causal : {false, true}) {
    const o::Segments qs = causal ? segments_of({3, 5, 1}) : segments_of({3, 5, 1});
    const o::Segments ks = causal ? qs : segments_of({4, 2, 3});
    const Tensor q = random_tensor(rng, {qs.total(), 8}, -2, 2);
    const Tensor k = random_tensor(rng, {ks.total(), 8}, -2, 2);
    const Tensor v = random_tensor(rng, {ks.total(), 8}, -2, 2);
    const Tensor wts = random_tensor(rng, {qs.total(), 8});
    Tape t1, t2;
    Var q1 = t1.input(q), k1 = t1.input(k), v1 = t1.input(v);
    Var q2 = t2.input(q), k2 = t2.input(k), v2 = t2.input(v);
    Var fused = o::segment_attention(q1, k1, v1, qs, ks, 4, causal);
    Var composed = composed_attention(q2, k2, v2, qs, ks, 4, causal);
    EXPECT_LT(max_abs_diff(fused.value(), composed.value()), 1e-12);
    t1.backward(weighted_sum(t1, fused, wts));
    t2.backward(weighted_sum(t2, composed, wts));
    EXPECT_LT(max_abs_diff(*t1.grad(q1), *t2.grad(q2)), 1e-12);
    EXPECT_LT(max_abs_diff(*t1.grad(k1), *t2.grad(k2)), 1e-12);
    EXPECT_LT(max_abs_diff(*t1.grad(v1), *t2.grad(v2)), 1e-12);
  }
}

TEST(Attention, SegmentsDoNotLeak) {
  std::mt19937_64 rng(4);
  const o::Segments s = segments_of({3, 4});
  Tensor q = random_tensor(rng, {7, 4});
  Tensor k = random_tensor(rng, {7, 4});
  Tensor v = random_tensor(rng, {7, 4});
  Tape t1;
  const Tensor base = o::segment_attention(t1.constant(q), t1.constant(k), t1.constant(v), s, s, 2, false).value();
  for (std::size_t c = 0; c < 4; ++c) v.at(5, c) += 10.0;  // perturb the second segment only
  Tape t2;
  const Tensor moved = o::segment_attention(t2.constant(q), t2.constant(k), t2.constant(v), s, s, 2, false).value();
  for (std::size_t i = 0; i < 3 * 4; ++i) EXPECT_EQ(base[i], moved[i]);
}

TEST(Attention, EmptyKeySegmentGivesZeros) {
  const o::Segments qs = segments_of({2, 1});
  const o::Segments ks = segments_of({0, 2});
  Tape tape;
  Var q = tape.constant(Tensor({3, 4}, 1.0));
  Var kv = tape.constant(Tensor({2, 4}, 1.0));
  const Tensor out = o::segment_attention(q, kv, kv, qs, ks, 2, false).value();
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(out[i], 0.0);
  for (std::size_t i = 8; i < 12; ++i) EXPECT_DOUBLE_EQ(out[i], 1.0);
}
