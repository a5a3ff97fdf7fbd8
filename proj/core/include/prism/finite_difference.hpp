#pragma once

// Central-difference gradient estimates. Used as the independent oracle for
// the analytic logit and parameter gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "prism/error.hpp"
#include "prism/matrix.hpp"

namespace prism {

inline constexpr double kMinDifferenceStep = 1e-6;
inline constexpr double kMaxDifferenceStep = 1e-3;

/// (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate i. `point` is
/// perturbed in place and restored exactly before returning.
inline std::vector<double> central_difference(const std::function<double()>& loss,
                                              std::span<double> point, double step) {
  if (!(step >= kMinDifferenceStep && step <= kMaxDifferenceStep)) {
    throw NumericError("finite-difference step outside [1e-6, 1e-3]");
  }
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + step;
    const double up = loss();
    point[i] = saved - step;
    const double down = loss();
    point[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// Finite-difference gradient of a loss over a logits matrix.
inline Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& loss_fn,
                                         Matrix logits, double step) {
  auto values = logits.values();
  auto grad = central_difference([&] { return loss_fn(logits); }, values, step);
  return Matrix(logits.rows(), logits.cols(), std::move(grad));
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps entries that
/// are both near zero from dominating.
inline double max_relative_error(std::span<const double> a, std::span<const double> b,
                                 double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace prism
