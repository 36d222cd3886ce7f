#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "geoproto/tensor.hpp"

namespace geoproto {

/// Central finite differences of a scalar function, coordinate by coordinate.
/// The gradient oracle used by the test suites; it never touches the tape.
inline std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f,
                                            const Tensor& x, double step = 1e-4) {
  Tensor probe = x;
  probe.grad.clear();
  probe.requires_grad = false;
  std::vector<double> g(probe.values.size());
  for (size_t i = 0; i < probe.values.size(); ++i) {
    double v0 = probe.values[i];
    probe.values[i] = v0 + step;
    double fp = f(probe);
    probe.values[i] = v0 - step;
    double fm = f(probe);
    probe.values[i] = v0;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Relative error with the guard denominator max(|a|, |b|, 1e-6).
inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline double max_grad_rel_err(const std::vector<double>& analytic,
                               const std::vector<double>& numeric) {
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, grad_rel_err(analytic[i], numeric[i]));
  return worst;
}

}  // namespace geoproto
