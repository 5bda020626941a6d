#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mblab/numerics/parameter.hpp"
#include "mblab/numerics/tape.hpp"

namespace mblab {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Per-element error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-5;
  // Parameters above this count are rejected (one forward pair per scalar).
  std::size_t max_parameters = 10000;
};

// Compares backward() gradients of `loss_fn` against central finite
// differences for every non-frozen parameter in `params`.
GradCheckReport check_gradients(ParameterStore& params, const std::function<Var(Tape&)>& loss_fn, double tolerance,
                                const GradCheckOptions& options = {});

}  // namespace mblab
