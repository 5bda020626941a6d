#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "mblab/numerics/tensor.hpp"

namespace mblab::testing {

// Standard CTC collapse: merge repeats, then drop blanks (id 0).
inline std::vector<int> ctc_collapse(const std::vector<int>& path) {
  std::vector<int> out;
  int prev = -1;
  for (int k : path) {
    if (k != prev && k != 0) out.push_back(k);
    prev = k;
  }
  return out;
}

// -log of the summed probability of every length-T path over C classes that
// collapses to `labels`. Exponential in T; meant for T <= 6.
inline double ctc_nll_by_enumeration(const Tensor& log_probs, const std::vector<int>& labels) {
  const std::size_t T = log_probs.rows(), C = log_probs.cols();
  std::vector<int> path(T, 0);
  double total = 0.0;
  while (true) {
    if (ctc_collapse(path) == labels) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += log_probs.at(t, static_cast<std::size_t>(path[t]));
      total += std::exp(lp);
    }
    std::size_t t = 0;
    while (t < T && ++path[t] == static_cast<int>(C)) path[t++] = 0;
    if (t == T) break;
  }
  return total > 0.0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

}  // namespace mblab::testing
