#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "propfault/nn/tensor.hpp"

namespace propfault::nn {

// A trainable tensor and its accumulated gradient, as seen by optimizers and
// the checkpoint writer.
struct Param {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

// Uniform in +/- sqrt(6 / (fan_in + fan_out)).
void xavier_uniform(Tensor& weights, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Fully connected layer, y = x * kernel + bias with kernel stored [in][out].

struct Dense {
  Tensor kernel;
  Tensor bias;
  Tensor grad_kernel;
  Tensor grad_bias;

  Dense() = default;
  Dense(std::size_t in_dim, std::size_t out_dim);

  std::size_t in_dim() const { return kernel.dim(0); }
  std::size_t out_dim() const { return kernel.dim(1); }

  void init(std::mt19937_64& rng);
  void forward(std::span<const double> x, std::span<double> y) const;
  // Accumulates parameter gradients. dx may be empty when the input gradient
  // is not needed.
  void backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);
  void zero_grad();
  void collect(std::vector<Param>& params, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// 3x3 valid-mode cross-correlation, stride 1. Feature maps are H x W x C
// (channel fastest); kernels are 3 x 3 x C x K.

struct Conv2d {
  Tensor kernels;
  Tensor bias;
  Tensor grad_kernels;
  Tensor grad_bias;

  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels);

  std::size_t in_channels() const { return kernels.dim(2); }
  std::size_t out_channels() const { return kernels.dim(3); }

  void init(std::mt19937_64& rng);
  // Writes the pre-activation output, (h-2) x (w-2) x K.
  void forward(const double* in, std::size_t h, std::size_t w, double* out) const;
  // dout is the gradient with respect to the pre-activation output. din may
  // be null (first layer).
  void backward(const double* in, std::size_t h, std::size_t w, const double* dout, double* din);
  void zero_grad();
  void collect(std::vector<Param>& params, const std::string& prefix);
};

// Tensor-level entry points. conv2d_valid returns the pre-activation map;
// conv2d_forward applies ReLU on top of it.
Tensor conv2d_valid(const Tensor& input, const Tensor& kernels, const Tensor& bias);
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias);

// Non-overlapping 2x2 max per channel; trailing odd row/column dropped.
Tensor maxpool2(const Tensor& input);

void maxpool2_forward(const double* in, std::size_t h, std::size_t w, std::size_t c, double* out,
                      std::uint32_t* argmax);
// Scatters dout into din (which must be zeroed by the caller).
void maxpool2_backward(const double* dout, std::size_t out_count, const std::uint32_t* argmax, double* din);

void relu_inplace(std::span<double> values);
// Zeroes grad wherever the activation was clipped.
void relu_backward(std::span<const double> activation, std::span<double> grad);

// dst[c] += sum over rows of m[r][c] for a row-major rows x cols block. Each
// column is summed top to bottom regardless of where m and dst sit in memory,
// which Eigen's colwise().sum() into a Map does not guarantee.
void add_column_sums(const double* m, std::size_t rows, std::size_t cols, double* dst);

// ---------------------------------------------------------------------------
// LSTM. Gate matrices are k x (k + d) acting on the concatenation [h_prev, x].

struct LstmCellWeights {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  Tensor w_f, w_i, w_o, w_c;
  Tensor b_f, b_i, b_o, b_c;

  LstmCellWeights() = default;
  LstmCellWeights(std::size_t input_dim, std::size_t hidden);
  void validate() const;
};

struct LstmCellOutput {
  std::vector<double> h;
  std::vector<double> c;
};

LstmCellOutput lstm_cell_forward(std::span<const double> x, std::span<const double> h_prev,
                                 std::span<const double> c_prev, const LstmCellWeights& w);

class LstmLayer {
 public:
  // Per-step activations kept for backpropagation through time.
  struct Cache {
    std::size_t steps = 0;
    std::vector<double> concat;  // steps x (k + d)
    std::vector<double> f, i, o, g, c, tanh_c, h;  // steps x k
  };

  // Same quantities for a minibatch, laid out [step][sample][unit].
  struct BatchCache {
    std::size_t steps = 0;
    std::size_t batch = 0;
    std::vector<double> concat;
    std::vector<double> f, i, o, g, c, tanh_c, h;
  };

  LstmLayer() = default;
  LstmLayer(std::size_t input_dim, std::size_t hidden);

  std::size_t input_dim() const { return weights.input_dim; }
  std::size_t hidden() const { return weights.hidden; }

  void init(std::mt19937_64& rng);
  // input is steps x d row-major; the cache receives every hidden state.
  void forward(const double* input, std::size_t steps, Cache& cache) const;
  // dh is steps x k (zero rows where the output is unused). din (steps x d)
  // may be null.
  void backward(const Cache& cache, const double* dh, double* din);
  // Batched forms; input is steps x batch x d, dh is steps x batch x k.
  // Results match the per-sample path up to summation order.
  void forward_batch(const double* input, std::size_t steps, std::size_t batch, BatchCache& cache) const;
  void backward_batch(const BatchCache& cache, const double* dh, double* din);
  void zero_grad();
  void collect(std::vector<Param>& params, const std::string& prefix);

  LstmCellWeights weights;
  LstmCellWeights grads;
};

}  // namespace propfault::nn
