#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace propfault::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Compares analytic gradients against central differences of `loss` taken by
// perturbing each entry of `params` in place (restored afterwards).
//
// Per-entry error is |a - n| / max(|a|, |n|, floor); the floor keeps
// vanishing gradients from turning round-off into a large relative error.
GradCheckResult check_gradient(const std::function<double()>& loss, std::span<double> params,
                               std::span<const double> analytic, double step = 1e-5, double floor = 1e-6);

}  // namespace propfault::nn
