#include "support/layer_trials.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>

#include "propfault/nn/gradcheck.hpp"
#include "propfault/nn/layers.hpp"
#include "propfault/nn/loss.hpp"

namespace propfault::testing {

namespace {

using nn::check_gradient;

struct Draw {
  std::mt19937_64 rng;
  explicit Draw(std::uint64_t seed) : rng(seed) {}
  std::size_t size(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }
  double real(double lo = -1.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  std::vector<double> vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = real(lo, hi);
    return v;
  }
  void fill(nn::Tensor& t, double lo = -1.0, double hi = 1.0) {
    for (double& x : t.values()) x = real(lo, hi);
  }
};

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void track(double& worst, const nn::GradCheckResult& r) { worst = std::max(worst, r.max_relative_error); }

}  // namespace

TrialSummary dense_trials(std::size_t trials, std::uint64_t seed) {
  Draw d(seed);
  TrialSummary s{"dense", trials, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    nn::Dense layer(d.size(1, 8), d.size(1, 8));
    layer.init(d.rng);
    d.fill(layer.bias);
    std::vector<double> x = d.vec(layer.in_dim());
    const std::vector<double> r = d.vec(layer.out_dim());
    std::vector<double> y(layer.out_dim());
    auto loss = [&] {
      layer.forward(x, y);
      return dot(y, r);
    };
    layer.zero_grad();
    std::vector<double> dx(x.size());
    layer.backward(x, r, dx);
    track(s.worst, check_gradient(loss, layer.kernel.values(), layer.grad_kernel.values()));
    track(s.worst, check_gradient(loss, layer.bias.values(), layer.grad_bias.values()));
    track(s.worst, check_gradient(loss, x, dx));
  }
  return s;
}

TrialSummary conv_trials(std::size_t trials, std::uint64_t seed) {
  Draw d(seed);
  TrialSummary s{"conv2d", trials, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = d.size(3, 7), w = d.size(3, 7);
    nn::Conv2d layer(d.size(1, 3), d.size(1, 3));
    layer.init(d.rng);
    d.fill(layer.bias);
    std::vector<double> in = d.vec(h * w * layer.in_channels());
    const std::size_t out_size = (h - 2) * (w - 2) * layer.out_channels();
    const std::vector<double> r = d.vec(out_size);
    std::vector<double> out(out_size);
    auto loss = [&] {
      layer.forward(in.data(), h, w, out.data());
      return dot(out, r);
    };
    layer.zero_grad();
    std::vector<double> din(in.size(), 0.0);
    layer.backward(in.data(), h, w, r.data(), din.data());
    track(s.worst, check_gradient(loss, layer.kernels.values(), layer.grad_kernels.values()));
    track(s.worst, check_gradient(loss, layer.bias.values(), layer.grad_bias.values()));
    track(s.worst, check_gradient(loss, in, din));
  }
  return s;
}

TrialSummary maxpool_trials(std::size_t trials, std::uint64_t seed) {
  Draw d(seed);
  TrialSummary s{"maxpool2", trials, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = d.size(2, 7), w = d.size(2, 7), c = d.size(1, 3);
    // Distinct values a step apart, so the finite difference never crosses a tie.
    std::vector<double> in(h * w * c);
    std::iota(in.begin(), in.end(), 0.0);
    std::shuffle(in.begin(), in.end(), d.rng);
    for (double& v : in) v = 0.01 * v + d.real(0.0, 0.001);
    const std::size_t out_size = (h / 2) * (w / 2) * c;
    const std::vector<double> r = d.vec(out_size);
    std::vector<double> out(out_size);
    std::vector<std::uint32_t> argmax(out_size);
    auto loss = [&] {
      nn::maxpool2_forward(in.data(), h, w, c, out.data(), argmax.data());
      return dot(out, r);
    };
    loss();
    std::vector<double> din(in.size(), 0.0);
    nn::maxpool2_backward(r.data(), out_size, argmax.data(), din.data());
    track(s.worst, check_gradient(loss, in, din));
  }
  return s;
}

TrialSummary relu_trials(std::size_t trials, std::uint64_t seed) {
  Draw d(seed);
  TrialSummary s{"relu", trials, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> x = d.vec(d.size(1, 32));
    for (double& v : x) v += v < 0.0 ? -0.01 : 0.01;  // keep clear of the kink
    const std::vector<double> r = d.vec(x.size());
    auto loss = [&] {
      std::vector<double> y = x;
      nn::relu_inplace(y);
      return dot(y, r);
    };
    std::vector<double> act = x;
    nn::relu_inplace(act);
    std::vector<double> grad = r;
    nn::relu_backward(act, grad);
    track(s.worst, check_gradient(loss, x, grad));
  }
  return s;
}

TrialSummary lstm_trials(std::size_t trials, std::uint64_t seed) {
  Draw d(seed);
  TrialSummary s{"lstm", trials, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t steps = d.size(1, 6);
    nn::LstmLayer layer(d.size(1, 4), d.size(1, 5));
    layer.init(d.rng);
    for (nn::Tensor* b : {&layer.weights.b_f, &layer.weights.b_i, &layer.weights.b_o, &layer.weights.b_c}) d.fill(*b);
    std::vector<double> x = d.vec(steps * layer.input_dim());
    const std::vector<double> r = d.vec(steps * layer.hidden());
    nn::LstmLayer::Cache cache;
    auto loss = [&] {
      nn::LstmLayer::Cache c;
      layer.forward(x.data(), steps, c);
      return dot(c.h, r);
    };
    layer.forward(x.data(), steps, cache);
    layer.zero_grad();
    std::vector<double> dx(x.size(), 0.0);
    layer.backward(cache, r.data(), dx.data());
    nn::LstmCellWeights& w = layer.weights;
    nn::LstmCellWeights& g = layer.grads;
    track(s.worst, check_gradient(loss, w.w_f.values(), g.w_f.values()));
    track(s.worst, check_gradient(loss, w.w_i.values(), g.w_i.values()));
    track(s.worst, check_gradient(loss, w.w_o.values(), g.w_o.values()));
    track(s.worst, check_gradient(loss, w.w_c.values(), g.w_c.values()));
    track(s.worst, check_gradient(loss, w.b_f.values(), g.b_f.values()));
    track(s.worst, check_gradient(loss, w.b_i.values(), g.b_i.values()));
    track(s.worst, check_gradient(loss, w.b_o.values(), g.b_o.values()));
    track(s.worst, check_gradient(loss, w.b_c.values(), g.b_c.values()));
    track(s.worst, check_gradient(loss, x, dx));
  }
  return s;
}

TrialSummary lstm_batch_trials(std::size_t trials, std::uint64_t seed) {
  Draw d(seed);
  TrialSummary s{"lstm-batch", trials, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t steps = d.size(1, 5), batch = d.size(1, 4);
    nn::LstmLayer layer(d.size(1, 3), d.size(1, 4));
    layer.init(d.rng);
    d.fill(layer.weights.b_f);
    std::vector<double> x = d.vec(steps * batch * layer.input_dim());
    const std::vector<double> r = d.vec(steps * batch * layer.hidden());
    auto loss = [&] {
      nn::LstmLayer::BatchCache c;
      layer.forward_batch(x.data(), steps, batch, c);
      return dot(c.h, r);
    };
    nn::LstmLayer::BatchCache cache;
    layer.forward_batch(x.data(), steps, batch, cache);
    layer.zero_grad();
    std::vector<double> dx(x.size(), 0.0);
    layer.backward_batch(cache, r.data(), dx.data());
    track(s.worst, check_gradient(loss, layer.weights.w_f.values(), layer.grads.w_f.values()));
    track(s.worst, check_gradient(loss, layer.weights.w_c.values(), layer.grads.w_c.values()));
    track(s.worst, check_gradient(loss, layer.weights.b_o.values(), layer.grads.b_o.values()));
    track(s.worst, check_gradient(loss, layer.weights.b_i.values(), layer.grads.b_i.values()));
    track(s.worst, check_gradient(loss, x, dx));
  }
  return s;
}

TrialSummary softmax_xent_trials(std::size_t trials, std::uint64_t seed) {
  Draw d(seed);
  TrialSummary s{"softmax-xent", trials, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> logits = d.vec(d.size(2, 16), -3.0, 3.0);
    const std::size_t label = d.size(0, logits.size() - 1);
    auto loss = [&] { return nn::softmax_xent(logits, label).loss; };
    std::vector<double> grad = nn::softmax_xent(logits, label).probabilities;
    grad[label] -= 1.0;
    track(s.worst, check_gradient(loss, logits, grad));
  }
  return s;
}

TrialSummary mse_trials(std::size_t trials, std::uint64_t seed) {
  Draw d(seed);
  TrialSummary s{"mse", trials, 0.0};
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> pred = d.vec(d.size(1, 8));
    const std::vector<double> target = d.vec(pred.size());
    auto loss = [&] { return nn::mse(pred, target); };
    std::vector<double> grad(pred.size());
    nn::mse(pred, target, grad);
    track(s.worst, check_gradient(loss, pred, grad));
  }
  return s;
}

std::vector<TrialSummary> all_layer_trials(std::size_t trials, std::uint64_t seed) {
  return {dense_trials(trials, seed + 1),        conv_trials(trials, seed + 2),
          maxpool_trials(trials, seed + 3),      relu_trials(trials, seed + 4),
          lstm_trials(trials, seed + 5),         lstm_batch_trials(trials, seed + 6),
          softmax_xent_trials(trials, seed + 7), mse_trials(trials, seed + 8)};
}

}  // namespace propfault::testing
