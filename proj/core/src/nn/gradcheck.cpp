#include "propfault/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "propfault/error.hpp"

namespace propfault::nn {

GradCheckResult check_gradient(const std::function<double()>& loss, std::span<double> params,
                               std::span<const double> analytic, double step, double floor) {
  if (params.size() != analytic.size()) throw InvalidArgument("gradcheck: size mismatch");
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss();
    params[i] = saved - step;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double err = std::abs(analytic[i] - numeric) / scale;
    if (err > result.max_relative_error) {
      result = {err, i, analytic[i], numeric};
    }
  }
  return result;
}

}  // namespace propfault::nn
