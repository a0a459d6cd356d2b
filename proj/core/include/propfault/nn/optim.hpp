#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "propfault/nn/layers.hpp"
#include "propfault/nn/tensor.hpp"

namespace propfault::nn {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 0.01;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// SGD with classical momentum, or Adam with bias correction. Slot state is
// created lazily on the first step and matches the parameter list order.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }

  // Applies one update using the gradients currently stored in params.
  void step(std::span<const Param> params);

  // Slot tensors (momentum, or Adam first/second moments) for checkpointing.
  std::vector<Tensor>& first_slots() { return first_; }
  std::vector<Tensor>& second_slots() { return second_; }
  const std::vector<Tensor>& first_slots() const { return first_; }
  const std::vector<Tensor>& second_slots() const { return second_; }
  void restore(std::uint64_t steps, std::vector<Tensor> first, std::vector<Tensor> second);

 private:
  void ensure_slots(std::span<const Param> params);

  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace propfault::nn
