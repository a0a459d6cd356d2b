#include "propfault/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "propfault/error.hpp"

namespace propfault::nn {

namespace {

// Four fixed lanes summed in a fixed order. A simd reduction would let the
// vectorizer peel for alignment, which makes the rounding depend on where the
// operands happen to sit in memory.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void xavier_uniform(Tensor& weights, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : weights.values()) v = dist(rng);
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in_dim, std::size_t out_dim)
    : kernel({in_dim, out_dim}),
      bias({out_dim}),
      grad_kernel({in_dim, out_dim}),
      grad_bias({out_dim}) {}

void Dense::init(std::mt19937_64& rng) {
  xavier_uniform(kernel, in_dim(), out_dim(), rng);
  bias.fill(0.0);
}

void Dense::forward(std::span<const double> x, std::span<double> y) const {
  const std::size_t n_in = in_dim();
  const std::size_t n_out = out_dim();
  std::copy(bias.data(), bias.data() + n_out, y.data());
  const double* k = kernel.data();
  for (std::size_t i = 0; i < n_in; ++i) {
    if (x[i] != 0.0) axpy(x[i], k + i * n_out, y.data(), n_out);
  }
}

void Dense::backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  const std::size_t n_in = in_dim();
  const std::size_t n_out = out_dim();
  axpy(1.0, dy.data(), grad_bias.data(), n_out);
  const double* k = kernel.data();
  double* gk = grad_kernel.data();
  for (std::size_t i = 0; i < n_in; ++i) {
    if (x[i] != 0.0) axpy(x[i], dy.data(), gk + i * n_out, n_out);
    if (!dx.empty()) dx[i] = dot(k + i * n_out, dy.data(), n_out);
  }
}

void Dense::zero_grad() {
  grad_kernel.fill(0.0);
  grad_bias.fill(0.0);
}

void Dense::collect(std::vector<Param>& params, const std::string& prefix) {
  params.push_back({prefix + ".kernel", &kernel, &grad_kernel});
  params.push_back({prefix + ".bias", &bias, &grad_bias});
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels)
    : kernels({3, 3, in_channels, out_channels}),
      bias({out_channels}),
      grad_kernels({3, 3, in_channels, out_channels}),
      grad_bias({out_channels}) {}

void Conv2d::init(std::mt19937_64& rng) {
  const std::size_t receptive = 9;
  xavier_uniform(kernels, receptive * in_channels(), receptive * out_channels(), rng);
  bias.fill(0.0);
}

void Conv2d::forward(const double* in, std::size_t h, std::size_t w, double* out) const {
  const std::size_t c_in = in_channels();
  const std::size_t k_out = out_channels();
  const std::size_t oh = h - 2;
  const std::size_t ow = w - 2;
  const double* kern = kernels.data();
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double* o = out + (y * ow + x) * k_out;
      std::copy(bias.data(), bias.data() + k_out, o);
      for (std::size_t dy = 0; dy < 3; ++dy) {
        for (std::size_t dx = 0; dx < 3; ++dx) {
          const double* ip = in + ((y + dy) * w + (x + dx)) * c_in;
          const double* kp = kern + (dy * 3 + dx) * c_in * k_out;
          for (std::size_t c = 0; c < c_in; ++c) {
            if (ip[c] != 0.0) axpy(ip[c], kp + c * k_out, o, k_out);
          }
        }
      }
    }
  }
}

void Conv2d::backward(const double* in, std::size_t h, std::size_t w, const double* dout, double* din) {
  const std::size_t c_in = in_channels();
  const std::size_t k_out = out_channels();
  const std::size_t oh = h - 2;
  const std::size_t ow = w - 2;
  const double* kern = kernels.data();
  double* gkern = grad_kernels.data();
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const double* g = dout + (y * ow + x) * k_out;
      axpy(1.0, g, grad_bias.data(), k_out);
      for (std::size_t dy = 0; dy < 3; ++dy) {
        for (std::size_t dx = 0; dx < 3; ++dx) {
          const std::size_t in_off = ((y + dy) * w + (x + dx)) * c_in;
          const std::size_t k_off = (dy * 3 + dx) * c_in * k_out;
          const double* ip = in + in_off;
          for (std::size_t c = 0; c < c_in; ++c) {
            if (ip[c] != 0.0) axpy(ip[c], g, gkern + k_off + c * k_out, k_out);
          }
          if (din != nullptr) {
            double* dip = din + in_off;
            for (std::size_t c = 0; c < c_in; ++c) dip[c] += dot(kern + k_off + c * k_out, g, k_out);
          }
        }
      }
    }
  }
}

void Conv2d::zero_grad() {
  grad_kernels.fill(0.0);
  grad_bias.fill(0.0);
}

void Conv2d::collect(std::vector<Param>& params, const std::string& prefix) {
  params.push_back({prefix + ".kernels", &kernels, &grad_kernels});
  params.push_back({prefix + ".bias", &bias, &grad_bias});
}

Tensor conv2d_valid(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  if (input.rank() != 3 || kernels.rank() != 4 || bias.rank() != 1) {
    throw InvalidArgument("conv2d: expected H x W x C input, 3 x 3 x C x K kernels and K bias");
  }
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h < 3 || w < 3) {
    throw InvalidArgument("conv2d: input " + input.shape_string() + " is smaller than the 3x3 kernel");
  }
  if (kernels.dim(0) != 3 || kernels.dim(1) != 3 || kernels.dim(2) != c || bias.dim(0) != kernels.dim(3)) {
    throw InvalidArgument("conv2d: kernel shape " + kernels.shape_string() + " incompatible with input " +
                          input.shape_string());
  }
  Conv2d layer;
  layer.kernels = kernels;
  layer.bias = bias;
  Tensor out({h - 2, w - 2, kernels.dim(3)});
  layer.forward(input.data(), h, w, out.data());
  return out;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  Tensor out = conv2d_valid(input, kernels, bias);
  relu_inplace(out.values());
  return out;
}

// ---------------------------------------------------------------- pooling / relu

void maxpool2_forward(const double* in, std::size_t h, std::size_t w, std::size_t c, double* out,
                      std::uint32_t* argmax) {
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((2 * y) * w + 2 * x) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * w + (2 * x + dx)) * c + ch;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (y * ow + x) * c + ch;
        out[o] = in[best];
        if (argmax != nullptr) argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

void maxpool2_backward(const double* dout, std::size_t out_count, const std::uint32_t* argmax, double* din) {
  for (std::size_t o = 0; o < out_count; ++o) din[argmax[o]] += dout[o];
}

Tensor maxpool2(const Tensor& input) {
  if (input.rank() != 3 || input.dim(0) < 2 || input.dim(1) < 2) {
    throw InvalidArgument("maxpool2: expected H x W x C input with H, W >= 2, got " + input.shape_string());
  }
  Tensor out({input.dim(0) / 2, input.dim(1) / 2, input.dim(2)});
  maxpool2_forward(input.data(), input.dim(0), input.dim(1), input.dim(2), out.data(), nullptr);
  return out;
}

void relu_inplace(std::span<double> values) {
  for (double& v : values) v = v > 0.0 ? v : 0.0;
}

void add_column_sums(const double* m, std::size_t rows, std::size_t cols, double* dst) {
  std::vector<double> sum(m, m + (rows > 0 ? cols : 0));
  sum.resize(cols, 0.0);
  for (std::size_t r = 1; r < rows; ++r) {
    const double* row = m + r * cols;
    for (std::size_t c = 0; c < cols; ++c) sum[c] += row[c];
  }
  for (std::size_t c = 0; c < cols; ++c) dst[c] += sum[c];
}

void relu_backward(std::span<const double> activation, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activation[i] > 0.0)) grad[i] = 0.0;
  }
}

// ---------------------------------------------------------------- LSTM

LstmCellWeights::LstmCellWeights(std::size_t in, std::size_t k)
    : input_dim(in),
      hidden(k),
      w_f({k, k + in}),
      w_i({k, k + in}),
      w_o({k, k + in}),
      w_c({k, k + in}),
      b_f({k}),
      b_i({k}),
      b_o({k}),
      b_c({k}) {}

void LstmCellWeights::validate() const {
  const std::vector<std::size_t> wshape{hidden, hidden + input_dim};
  const std::vector<std::size_t> bshape{hidden};
  for (const Tensor* t : {&w_f, &w_i, &w_o, &w_c}) {
    if (t->shape() != wshape) throw InvalidArgument("lstm: gate matrix shape " + t->shape_string());
  }
  for (const Tensor* t : {&b_f, &b_i, &b_o, &b_c}) {
    if (t->shape() != bshape) throw InvalidArgument("lstm: gate bias shape " + t->shape_string());
  }
}

namespace {

// One LSTM step. concat must already hold [h_prev, x]; writes gate outputs,
// the new cell state and hidden state.
void lstm_step(const LstmCellWeights& w, const double* concat, const double* c_prev, double* f, double* i,
               double* o, double* g, double* c, double* tanh_c, double* h) {
  const std::size_t k = w.hidden;
  const std::size_t n = k + w.input_dim;
  for (std::size_t r = 0; r < k; ++r) {
    f[r] = sigmoid(w.b_f[r] + dot(w.w_f.data() + r * n, concat, n));
    i[r] = sigmoid(w.b_i[r] + dot(w.w_i.data() + r * n, concat, n));
    o[r] = sigmoid(w.b_o[r] + dot(w.w_o.data() + r * n, concat, n));
    g[r] = std::tanh(w.b_c[r] + dot(w.w_c.data() + r * n, concat, n));
    c[r] = f[r] * c_prev[r] + i[r] * g[r];
    tanh_c[r] = std::tanh(c[r]);
    h[r] = o[r] * tanh_c[r];
  }
}

}  // namespace

LstmCellOutput lstm_cell_forward(std::span<const double> x, std::span<const double> h_prev,
                                 std::span<const double> c_prev, const LstmCellWeights& w) {
  w.validate();
  if (x.size() != w.input_dim || h_prev.size() != w.hidden || c_prev.size() != w.hidden) {
    throw InvalidArgument("lstm: input/state sizes do not match the cell weights");
  }
  const std::size_t k = w.hidden;
  std::vector<double> concat(h_prev.begin(), h_prev.end());
  concat.insert(concat.end(), x.begin(), x.end());
  std::vector<double> f(k), i(k), o(k), g(k), tanh_c(k);
  LstmCellOutput out{std::vector<double>(k), std::vector<double>(k)};
  lstm_step(w, concat.data(), c_prev.data(), f.data(), i.data(), o.data(), g.data(), out.c.data(), tanh_c.data(),
            out.h.data());
  return out;
}

LstmLayer::LstmLayer(std::size_t input_dim, std::size_t hidden)
    : weights(input_dim, hidden), grads(input_dim, hidden) {}

void LstmLayer::init(std::mt19937_64& rng) {
  const std::size_t fan_in = weights.hidden + weights.input_dim;
  for (Tensor* t : {&weights.w_f, &weights.w_i, &weights.w_o, &weights.w_c}) {
    xavier_uniform(*t, fan_in, weights.hidden, rng);
  }
  for (Tensor* t : {&weights.b_i, &weights.b_o, &weights.b_c}) t->fill(0.0);
  // Forget gate starts open.
  weights.b_f.fill(1.0);
}

void LstmLayer::forward(const double* input, std::size_t steps, Cache& cache) const {
  const std::size_t k = weights.hidden;
  const std::size_t d = weights.input_dim;
  const std::size_t n = k + d;
  cache.steps = steps;
  cache.concat.assign(steps * n, 0.0);
  for (auto* v : {&cache.f, &cache.i, &cache.o, &cache.g, &cache.c, &cache.tanh_c, &cache.h}) {
    v->assign(steps * k, 0.0);
  }
  const std::vector<double> zeros(k, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    double* cat = cache.concat.data() + t * n;
    const double* h_prev = t == 0 ? zeros.data() : cache.h.data() + (t - 1) * k;
    const double* c_prev = t == 0 ? zeros.data() : cache.c.data() + (t - 1) * k;
    std::copy(h_prev, h_prev + k, cat);
    std::copy(input + t * d, input + (t + 1) * d, cat + k);
    const std::size_t off = t * k;
    lstm_step(weights, cat, c_prev, cache.f.data() + off, cache.i.data() + off, cache.o.data() + off,
              cache.g.data() + off, cache.c.data() + off, cache.tanh_c.data() + off, cache.h.data() + off);
  }
}

void LstmLayer::backward(const Cache& cache, const double* dh, double* din) {
  const std::size_t k = weights.hidden;
  const std::size_t d = weights.input_dim;
  const std::size_t n = k + d;
  std::vector<double> dh_next(k, 0.0), dc_next(k, 0.0);
  std::vector<double> dpre_f(k), dpre_i(k), dpre_o(k), dpre_g(k), dconcat(n);
  for (std::size_t step = cache.steps; step-- > 0;) {
    const std::size_t off = step * k;
    const double* f = cache.f.data() + off;
    const double* i = cache.i.data() + off;
    const double* o = cache.o.data() + off;
    const double* g = cache.g.data() + off;
    const double* tc = cache.tanh_c.data() + off;
    const double* c_prev = step == 0 ? nullptr : cache.c.data() + off - k;
    for (std::size_t r = 0; r < k; ++r) {
      const double dh_total = dh[off + r] + dh_next[r];
      const double dc = dh_total * o[r] * (1.0 - tc[r] * tc[r]) + dc_next[r];
      const double cp = c_prev ? c_prev[r] : 0.0;
      dpre_o[r] = dh_total * tc[r] * o[r] * (1.0 - o[r]);
      dpre_f[r] = dc * cp * f[r] * (1.0 - f[r]);
      dpre_i[r] = dc * g[r] * i[r] * (1.0 - i[r]);
      dpre_g[r] = dc * i[r] * (1.0 - g[r] * g[r]);
      dc_next[r] = dc * f[r];
    }
    const double* cat = cache.concat.data() + step * n;
    std::fill(dconcat.begin(), dconcat.end(), 0.0);
    const std::pair<const Tensor*, Tensor*> wpairs[4] = {
        {&weights.w_f, &grads.w_f}, {&weights.w_i, &grads.w_i}, {&weights.w_o, &grads.w_o}, {&weights.w_c, &grads.w_c}};
    Tensor* bgrads[4] = {&grads.b_f, &grads.b_i, &grads.b_o, &grads.b_c};
    const std::vector<double>* dpre[4] = {&dpre_f, &dpre_i, &dpre_o, &dpre_g};
    for (std::size_t gate = 0; gate < 4; ++gate) {
      const double* wmat = wpairs[gate].first->data();
      double* gmat = wpairs[gate].second->data();
      double* gb = bgrads[gate]->data();
      const std::vector<double>& dp = *dpre[gate];
      for (std::size_t r = 0; r < k; ++r) {
        if (dp[r] == 0.0) continue;
        gb[r] += dp[r];
        axpy(dp[r], cat, gmat + r * n, n);
        axpy(dp[r], wmat + r * n, dconcat.data(), n);
      }
    }
    std::copy(dconcat.begin(), dconcat.begin() + k, dh_next.begin());
    if (din != nullptr) std::copy(dconcat.begin() + k, dconcat.end(), din + step * d);
  }
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

}  // namespace

void LstmLayer::forward_batch(const double* input, std::size_t steps, std::size_t batch, BatchCache& cache) const {
  const std::size_t k = weights.hidden;
  const std::size_t d = weights.input_dim;
  const std::size_t n = k + d;
  cache.steps = steps;
  cache.batch = batch;
  cache.concat.assign(steps * batch * n, 0.0);
  for (auto* v : {&cache.f, &cache.i, &cache.o, &cache.g, &cache.c, &cache.tanh_c, &cache.h}) {
    v->assign(steps * batch * k, 0.0);
  }
  const Tensor* wts[4] = {&weights.w_f, &weights.w_i, &weights.w_o, &weights.w_c};
  const Tensor* bias[4] = {&weights.b_f, &weights.b_i, &weights.b_o, &weights.b_c};
  std::vector<double>* out[4] = {&cache.f, &cache.i, &cache.o, &cache.g};
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t sk = t * batch * k;
    double* cat = cache.concat.data() + t * batch * n;
    for (std::size_t b = 0; b < batch; ++b) {
      if (t > 0) std::copy_n(cache.h.data() + sk - batch * k + b * k, k, cat + b * n);
      std::copy_n(input + (t * batch + b) * d, d, cat + b * n + k);
    }
    CMap cm(cat, ix(batch), ix(n));
    for (std::size_t gate = 0; gate < 4; ++gate) {
      MMap z(out[gate]->data() + sk, ix(batch), ix(k));
      z.noalias() = cm * CMap(wts[gate]->data(), ix(k), ix(n)).transpose();
      z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias[gate]->data(), ix(k));
    }
    for (std::size_t j = 0; j < batch * k; ++j) {
      const std::size_t a = sk + j;
      cache.f[a] = sigmoid(cache.f[a]);
      cache.i[a] = sigmoid(cache.i[a]);
      cache.o[a] = sigmoid(cache.o[a]);
      cache.g[a] = std::tanh(cache.g[a]);
      const double c_prev = t > 0 ? cache.c[a - batch * k] : 0.0;
      cache.c[a] = cache.f[a] * c_prev + cache.i[a] * cache.g[a];
      cache.tanh_c[a] = std::tanh(cache.c[a]);
      cache.h[a] = cache.o[a] * cache.tanh_c[a];
    }
  }
}

void LstmLayer::backward_batch(const BatchCache& cache, const double* dh, double* din) {
  const std::size_t k = weights.hidden;
  const std::size_t d = weights.input_dim;
  const std::size_t n = k + d;
  const std::size_t batch = cache.batch;
  const std::size_t bk = batch * k;
  std::vector<double> dh_next(bk, 0.0), dc_next(bk, 0.0), dconcat(batch * n);
  std::vector<double> dpre[4] = {std::vector<double>(bk), std::vector<double>(bk), std::vector<double>(bk),
                                 std::vector<double>(bk)};
  const Tensor* wts[4] = {&weights.w_f, &weights.w_i, &weights.w_o, &weights.w_c};
  Tensor* gw[4] = {&grads.w_f, &grads.w_i, &grads.w_o, &grads.w_c};
  Tensor* gb[4] = {&grads.b_f, &grads.b_i, &grads.b_o, &grads.b_c};
  for (std::size_t step = cache.steps; step-- > 0;) {
    const std::size_t sk = step * bk;
    for (std::size_t j = 0; j < bk; ++j) {
      const std::size_t a = sk + j;
      const double tc = cache.tanh_c[a];
      const double o = cache.o[a], f = cache.f[a], i = cache.i[a], g = cache.g[a];
      const double dh_total = dh[a] + dh_next[j];
      const double dc = dh_total * o * (1.0 - tc * tc) + dc_next[j];
      const double cp = step > 0 ? cache.c[a - bk] : 0.0;
      dpre[2][j] = dh_total * tc * o * (1.0 - o);
      dpre[0][j] = dc * cp * f * (1.0 - f);
      dpre[1][j] = dc * g * i * (1.0 - i);
      dpre[3][j] = dc * i * (1.0 - g * g);
      dc_next[j] = dc * f;
    }
    CMap cm(cache.concat.data() + step * batch * n, ix(batch), ix(n));
    MMap dcat(dconcat.data(), ix(batch), ix(n));
    dcat.setZero();
    for (std::size_t gate = 0; gate < 4; ++gate) {
      CMap dz(dpre[gate].data(), ix(batch), ix(k));
      MMap(gw[gate]->data(), ix(k), ix(n)).noalias() += dz.transpose() * cm;
      add_column_sums(dpre[gate].data(), batch, k, gb[gate]->data());
      dcat.noalias() += dz * CMap(wts[gate]->data(), ix(k), ix(n));
    }
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(dconcat.data() + b * n, k, dh_next.data() + b * k);
      if (din != nullptr) std::copy_n(dconcat.data() + b * n + k, d, din + (step * batch + b) * d);
    }
  }
}

void LstmLayer::zero_grad() {
  for (Tensor* t : {&grads.w_f, &grads.w_i, &grads.w_o, &grads.w_c, &grads.b_f, &grads.b_i, &grads.b_o, &grads.b_c}) {
    t->fill(0.0);
  }
}

void LstmLayer::collect(std::vector<Param>& params, const std::string& prefix) {
  params.push_back({prefix + ".w_f", &weights.w_f, &grads.w_f});
  params.push_back({prefix + ".w_i", &weights.w_i, &grads.w_i});
  params.push_back({prefix + ".w_o", &weights.w_o, &grads.w_o});
  params.push_back({prefix + ".w_c", &weights.w_c, &grads.w_c});
  params.push_back({prefix + ".b_f", &weights.b_f, &grads.b_f});
  params.push_back({prefix + ".b_i", &weights.b_i, &grads.b_i});
  params.push_back({prefix + ".b_o", &weights.b_o, &grads.b_o});
  params.push_back({prefix + ".b_c", &weights.b_c, &grads.b_c});
}

}  // namespace propfault::nn
