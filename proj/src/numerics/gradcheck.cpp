#include "mblab/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mblab/errors.hpp"

namespace mblab {

GradCheckReport check_gradients(ParameterStore& params, const std::function<Var(Tape&)>& loss_fn, double tolerance,
                                const GradCheckOptions& options) {
  const std::size_t n = params.count_values([&](const std::string& name) { return !params.get(name).frozen; });
  if (n >= options.max_parameters) {
    throw ContractError("check_gradients: fragment has " + std::to_string(n) + " parameters (limit " +
                        std::to_string(options.max_parameters) + ")");
  }
  params.zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto evaluate = [&]() {
    Tape tape;
    tape.set_grad_enabled(false);
    return loss_fn(tape).value().item();
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  report.pass = true;
  for (auto& [name, p] : params.items()) {
    if (p.frozen) continue;
    GradCheckEntry entry{name, 0.0, true};
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + options.step;
      const double up = evaluate();
      p.value[i] = saved - options.step;
      const double down = evaluate();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(analytic - numeric) / denom);
    }
    entry.pass = entry.max_rel_error <= tolerance;
    report.pass = report.pass && entry.pass;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace mblab
