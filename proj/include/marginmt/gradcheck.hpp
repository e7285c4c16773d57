#pragma once

#include <functional>
#include <string>

#include "marginmt/tensor.hpp"

namespace marginmt {

struct GradCheckReport {
  bool ok = false;
  double max_discrepancy = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the recorded gradient of a scalar function against central
/// differences, element by element. The discrepancy of one element is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor); the check passes
/// when the largest discrepancy is <= tol.
///
/// `f` must be deterministic. `x` is perturbed in place and restored.
GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps,
                                  double tol, double floor = 1e-2);

}  // namespace marginmt
