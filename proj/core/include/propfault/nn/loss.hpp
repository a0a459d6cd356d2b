#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace propfault::nn {

struct SoftmaxXent {
  double loss = 0.0;
  std::vector<double> probabilities;
};

// Max-subtracted softmax followed by -log p[label]. The gradient with
// respect to the logits is probabilities - one_hot(label).
SoftmaxXent softmax_xent(std::span<const double> logits, std::size_t label);

std::vector<double> softmax(std::span<const double> logits);

// Mean squared error over the output vector; fills grad with dL/dprediction
// when it is non-empty.
double mse(std::span<const double> prediction, std::span<const double> target, std::span<double> grad = {});

}  // namespace propfault::nn
