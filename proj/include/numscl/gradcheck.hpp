#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "numscl/autodiff.hpp"

namespace numscl {

/// Builds a scalar loss on the given tape; parameters must enter via tape.param().
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients with central differences at every coordinate
/// of `params`. Error per coordinate is |a - n| / max(floor, |a| + |n|); the floor
/// keeps coordinates whose gradient is below the difference quotient's rounding
/// noise (about eps * |loss| / step) from dominating.
inline GradCheckResult finite_diff_check(const LossBuilder& f, const std::vector<Param*>& params, double step = 1e-4,
                                         double floor = 1e-8) {
  if (!(step > 0.0)) throw Error("finite_diff_check: step must be positive");
  if (!(floor > 0.0)) throw Error("finite_diff_check: floor must be positive");
  auto eval = [&f]() {
    Tape tape(false);
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw Error("finite_diff_check: loss is not finite");
    return v;
  };

  for (Param* p : params) p->grad.fill(0.0);
  {
    Tape tape;
    Var loss = f(tape);
    if (!std::isfinite(loss.item())) throw Error("finite_diff_check: loss is not finite");
    tape.backward(loss);
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + step;
      const double up = eval();
      p.value[i] = orig - step;
      const double down = eval();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p.grad[i];
      const double err = std::fabs(analytic - numeric) / std::max(floor, std::fabs(analytic) + std::fabs(numeric));
      if (err >= res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = pi;
        res.worst_name = p.name;
        res.worst_index = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  for (Param* p : params) p->grad.fill(0.0);
  return res;
}

}  // namespace numscl
