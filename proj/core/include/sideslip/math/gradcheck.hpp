#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace sideslip {

// Central-difference comparison against an analytic gradient.
// Steps are relative, h * max(1, |x_i|), so large-magnitude coordinates
// (tyre stiffness and the like) do not drown in cancellation noise.
// Returns max_i |analytic_i - central_i| / (|central_i| + 1e-12).
template <class F>
double finite_difference_check(F&& f, std::span<const double> analytic,
                               std::span<double> x, double h) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    const double step = h * std::max(1.0, std::fabs(keep));
    x[i] = keep + step;
    const double fp = f(x);
    x[i] = keep - step;
    const double fm = f(x);
    x[i] = keep;
    const double central = (fp - fm) / (2.0 * step);
    const double err = std::fabs(analytic[i] - central) / (std::fabs(central) + 1e-12);
    if (err > worst) worst = err;
  }
  return worst;
}

}  // namespace sideslip
