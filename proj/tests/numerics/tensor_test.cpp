#include <gtest/gtest.h>

#include "mblab/errors.hpp"
#include "mblab/numerics/parameter.hpp"
#include "mblab/numerics/tensor.hpp"

using namespace mblab;

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
}

TEST(Tensor, RankOneIsSingleRow) {
  Tensor v = Tensor::vector({1, 2, 3});
  EXPECT_EQ(v.rows(), 1u);
  EXPECT_EQ(v.cols(), 3u);
}

TEST(ParameterStore, OrderIsLexicographic) {
  ParameterStore store;
  store.add("b", Tensor({1}));
  store.add("a", Tensor({1}));
  EXPECT_EQ(store.items().begin()->first, "a");
  EXPECT_THROW(store.add("a", Tensor({1})), StateError);
}

TEST(ParameterStore, RoundToF32AndChecksum) {
  ParameterStore store;
  store.add("w", Tensor({1}, 0.1));
  const auto before = store.checksum();
  store.round_to_f32();
  EXPECT_EQ(store.get("w").value[0], static_cast<double>(0.1f));
  EXPECT_NE(before, store.checksum());
}
