#include "propfault/nn/optim.hpp"

#include <cmath>

#include "propfault/error.hpp"

namespace propfault::nn {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw InvalidArgument("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

void Optimizer::ensure_slots(std::span<const Param> params) {
  if (first_.size() == params.size()) return;
  first_.clear();
  second_.clear();
  for (const Param& p : params) {
    first_.emplace_back(p.value->shape());
    if (config_.kind == OptimizerKind::Adam) second_.emplace_back(p.value->shape());
  }
}

void Optimizer::restore(std::uint64_t steps, std::vector<Tensor> first, std::vector<Tensor> second) {
  steps_ = steps;
  first_ = std::move(first);
  second_ = std::move(second);
}

void Optimizer::step(std::span<const Param> params) {
  ensure_slots(params);
  ++steps_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::Sgd) {
    const double mu = config_.momentum;
    for (std::size_t p = 0; p < params.size(); ++p) {
      double* w = params[p].value->data();
      const double* g = params[p].grad->data();
      double* v = first_[p].data();
      const std::size_t n = params[p].value->size();
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = mu * v[i] - lr * g[i];
        w[i] += v[i];
      }
    }
    return;
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(b1, t);
  const double correction2 = 1.0 - std::pow(b2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    double* w = params[p].value->data();
    const double* g = params[p].grad->data();
    double* m = first_[p].data();
    double* v = second_[p].data();
    const std::size_t n = params[p].value->size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace propfault::nn
