#include "marginmt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace marginmt {

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps,
                                  double tol, double floor) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  const bool was = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f(x);
  if (!std::isfinite(y.item())) throw std::domain_error("finite_diff_check: non-finite function value");
  y.backward();
  std::vector<double> analytic(x.size(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  x.zero_grad();

  GradCheckReport report;
  report.ok = true;
  auto xs = x.data();
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double saved = xs[i];
      xs[i] = saved + eps;
      const double up = f(x).item();
      xs[i] = saved - eps;
      const double down = f(x).item();
      xs[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic[i]))
        throw std::domain_error("finite_diff_check: non-finite value at element " + std::to_string(i));
      const double numeric = (up - down) / (2 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double d = std::abs(analytic[i] - numeric) / denom;
      if (i == 0 || d > report.max_discrepancy) {
        report.max_discrepancy = d;
        report.worst_index = i;
        report.analytic = analytic[i];
        report.numeric = numeric;
      }
    }
  }
  report.ok = report.max_discrepancy <= tol;
  x.set_requires_grad(was);
  return report;
}

}  // namespace marginmt
