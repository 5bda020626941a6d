#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mblab/numerics/tape.hpp"

// Differentiable primitives. Matrices are rank-2 [rows x cols]; a rank-1
// tensor is a single row wherever a "last axis" is involved.
namespace mblab::ops {

// Row ranges of a packed batch: segment s owns rows [offsets[s], offsets[s+1]).
struct Segments {
  std::vector<std::size_t> offsets{0};

  std::size_t count() const { return offsets.size() - 1; }
  std::size_t begin(std::size_t s) const { return offsets[s]; }
  std::size_t length(std::size_t s) const { return offsets[s + 1] - offsets[s]; }
  std::size_t total() const { return offsets.back(); }
  void push(std::size_t len) { offsets.push_back(offsets.back() + len); }
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// [m x n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);
Var linear(Var x, Var weight, Var bias);

Var softmax(Var a);
Var log_softmax(Var a);
// Normalizes over the last axis; constant rows map to 0.
Var layer_norm(Var x, double eps = 1e-5);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Exact (erf-based) GELU.
Var gelu(Var a);

// Rows of `table` selected by ids.
Var embedding(Var table, std::span<const int> ids);
// axis 0 stacks rows, axis 1 joins columns.
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
// Positions where mask[i] is true are replaced by `value` (no gradient flows there).
Var masked_fill(Var a, const std::vector<bool>& mask, double value);

Var sum(Var a);
Var mean(Var a);
// [m x n] -> [m]
Var row_sum(Var a);
// [m x n] -> [m]: a[i, cols[i]]
Var pick(Var a, std::span<const int> cols);

// Multi-head scaled dot-product attention over a packed batch. Query rows of
// segment s attend only to key rows of segment s. With `causal`, query i of a
// segment sees keys 0..i of the same segment (requires equal segment lengths).
// A segment with no keys yields zero output rows.
Var segment_attention(Var q, Var k, Var v, const Segments& q_segments, const Segments& k_segments,
                      std::size_t n_heads, bool causal);

}  // namespace mblab::ops
