#include "propfault/nn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "propfault/error.hpp"

namespace propfault::nn {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw InvalidArgument("softmax: need at least two logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

SoftmaxXent softmax_xent(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw InvalidArgument("softmax_xent: label " + std::to_string(label) + " out of range for " +
                          std::to_string(logits.size()) + " classes");
  }
  SoftmaxXent out;
  out.probabilities = softmax(logits);
  // log-sum-exp form keeps the loss accurate when p[label] underflows.
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  out.loss = std::log(total) + peak - logits[label];
  return out;
}

double mse(std::span<const double> prediction, std::span<const double> target, std::span<double> grad) {
  if (prediction.size() != target.size() || prediction.empty()) {
    throw InvalidArgument("mse: prediction/target size mismatch");
  }
  const double n = static_cast<double>(prediction.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double diff = prediction[i] - target[i];
    loss += diff * diff;
    if (!grad.empty()) grad[i] = 2.0 * diff / n;
  }
  return loss / n;
}

}  // namespace propfault::nn
