#include "propfault/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Core>

#include "propfault/error.hpp"
#include "propfault/nn/loss.hpp"

namespace propfault::clf {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using nn::format_double;
using nn::parse_double;

// ---------------------------------------------------------------- config

void CnnConfig::validate() const {
  if (classes < 2) throw InvalidArgument("cnn: need at least two classes");
  if (dense_units < 1) throw InvalidArgument("cnn: dense_units must be >= 1");
  if (conv_channels.empty()) throw InvalidArgument("cnn: need at least one conv block");
  std::size_t h = height, w = width;
  for (std::size_t l = 0; l < conv_channels.size(); ++l) {
    if (conv_channels[l] < 1) throw InvalidArgument("cnn: conv channel counts must be >= 1");
    if (h < 3 || w < 3) {
      throw InvalidArgument("cnn: conv block " + std::to_string(l + 1) + " receives a " + std::to_string(h) + "x" +
                            std::to_string(w) + " map, smaller than the 3x3 kernel");
    }
    h -= 2;
    w -= 2;
    if (h < 2 || w < 2) {
      throw InvalidArgument("cnn: pooling after conv block " + std::to_string(l + 1) + " receives a " +
                            std::to_string(h) + "x" + std::to_string(w) + " map");
    }
    h /= 2;
    w /= 2;
  }
}

std::size_t expected_parameter_count(const CnnConfig& config) {
  config.validate();
  std::size_t h = config.height, w = config.width, c = 1, total = 0;
  for (std::size_t k : config.conv_channels) {
    total += 9 * c * k + k;
    h = (h - 2) / 2;
    w = (w - 2) / 2;
    c = k;
  }
  const std::size_t flat = h * w * c;
  total += flat * config.dense_units + config.dense_units;
  total += config.dense_units * config.classes + config.classes;
  return total;
}

// ---------------------------------------------------------------- model

CnnModel build_cnn(const CnnConfig& config, std::uint64_t seed) {
  config.validate();
  CnnModel m;
  m.config_ = config;
  std::mt19937_64 rng(seed);
  MapShape shape{config.height, config.width, 1};
  for (std::size_t k : config.conv_channels) {
    m.shapes_.push_back(shape);
    m.convs_.emplace_back(shape.c, k);
    m.convs_.back().init(rng);
    shape = {(shape.h - 2) / 2, (shape.w - 2) / 2, k};
  }
  m.shapes_.push_back(shape);
  m.hidden_ = nn::Dense(shape.size(), config.dense_units);
  m.hidden_.init(rng);
  m.output_ = nn::Dense(config.dense_units, config.classes);
  m.output_.init(rng);
  return m;
}

std::size_t CnnModel::parameter_count() const {
  std::size_t n = hidden_.kernel.size() + hidden_.bias.size() + output_.kernel.size() + output_.bias.size();
  for (const nn::Conv2d& c : convs_) n += c.kernels.size() + c.bias.size();
  return n;
}

std::vector<nn::Param> CnnModel::parameters() {
  std::vector<nn::Param> params;
  for (std::size_t l = 0; l < convs_.size(); ++l) convs_[l].collect(params, "conv" + std::to_string(l));
  hidden_.collect(params, "dense1");
  output_.collect(params, "dense2");
  return params;
}

void CnnModel::zero_grad() {
  for (nn::Conv2d& c : convs_) c.zero_grad();
  hidden_.zero_grad();
  output_.zero_grad();
}

// Per-batch activations.
struct CnnModel::Cache {
  std::size_t batch = 0;
  std::vector<std::vector<double>> cols;     // per block: batch x P x 9C
  std::vector<std::vector<double>> act;      // per block: batch x P x K, after ReLU
  std::vector<std::vector<double>> pooled;   // per block: batch x pooled size
  std::vector<std::vector<std::uint32_t>> argmax;
  RowMat flat, hidden, logits;

  void resize(const CnnModel& m, std::size_t b) {
    batch = b;
    const std::size_t blocks = m.convs_.size();
    cols.resize(blocks);
    act.resize(blocks);
    pooled.resize(blocks);
    argmax.resize(blocks);
    for (std::size_t l = 0; l < blocks; ++l) {
      const MapShape& in = m.shapes_[l];
      const std::size_t p = (in.h - 2) * (in.w - 2);
      const std::size_t k = m.convs_[l].out_channels();
      cols[l].resize(b * p * 9 * in.c);
      act[l].resize(b * p * k);
      pooled[l].resize(b * m.shapes_[l + 1].size());
      argmax[l].resize(b * m.shapes_[l + 1].size());
    }
    flat.resize(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(m.flat_size()));
  }
};

namespace {

// Rows are output positions, columns are (dy, dx, c) in kernel storage order.
void im2col(const double* in, std::size_t h, std::size_t w, std::size_t c, double* cols) {
  const std::size_t oh = h - 2, ow = w - 2;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double* row = cols + (y * ow + x) * 9 * c;
      for (std::size_t dy = 0; dy < 3; ++dy) {
        std::copy_n(in + ((y + dy) * w + x) * c, 3 * c, row + dy * 3 * c);
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t h, std::size_t w, std::size_t c, double* din) {
  const std::size_t oh = h - 2, ow = w - 2;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const double* row = cols + (y * ow + x) * 9 * c;
      for (std::size_t dy = 0; dy < 3; ++dy) {
        double* dst = din + ((y + dy) * w + x) * c;
        const double* src = row + dy * 3 * c;
        for (std::size_t j = 0; j < 3 * c; ++j) dst[j] += src[j];
      }
    }
  }
}

Eigen::Map<const RowMat> as_matrix(const nn::Tensor& t, std::size_t rows, std::size_t cols) {
  return {t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Eigen::Map<RowMat> as_matrix(nn::Tensor& t, std::size_t rows, std::size_t cols) {
  return {t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Eigen::Map<const RowVec> as_row(const nn::Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.size())}; }

}  // namespace

void CnnModel::forward_sample(const double* sample, Cache& cache, std::size_t slot) const {
  const double* in = sample;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    const MapShape& s = shapes_[l];
    const std::size_t p = (s.h - 2) * (s.w - 2);
    const std::size_t k9 = 9 * s.c;
    const std::size_t k = convs_[l].out_channels();
    double* cols = cache.cols[l].data() + slot * p * k9;
    im2col(in, s.h, s.w, s.c, cols);
    Eigen::Map<const RowMat> cm(cols, static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k9));
    Eigen::Map<RowMat> act(cache.act[l].data() + slot * p * k, static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
    act.noalias() = cm * as_matrix(convs_[l].kernels, k9, k);
    act.rowwise() += as_row(convs_[l].bias);
    act = act.cwiseMax(0.0);
    const std::size_t pooled = shapes_[l + 1].size();
    double* out = cache.pooled[l].data() + slot * pooled;
    nn::maxpool2_forward(act.data(), s.h - 2, s.w - 2, k, out, cache.argmax[l].data() + slot * pooled);
    in = out;
  }
  std::copy_n(in, flat_size(), cache.flat.row(static_cast<Eigen::Index>(slot)).data());
}

std::vector<double> CnnModel::logits(std::span<const double> samples, std::size_t count) const {
  if (samples.size() != count * input_size()) {
    throw InvalidArgument("cnn: expected " + std::to_string(count) + " samples of " + std::to_string(input_size()) +
                          " values, got " + std::to_string(samples.size()) + " values");
  }
  std::vector<double> out(count * config_.classes);
  constexpr std::size_t kChunk = 64;
  Cache cache;
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t b = std::min(kChunk, count - start);
    if (cache.batch != b) cache.resize(*this, b);
    for (std::size_t s = 0; s < b; ++s) forward_sample(samples.data() + (start + s) * input_size(), cache, s);
    RowMat hidden = cache.flat * as_matrix(hidden_.kernel, flat_size(), config_.dense_units);
    hidden.rowwise() += as_row(hidden_.bias);
    hidden = hidden.cwiseMax(0.0);
    Eigen::Map<RowMat> lg(out.data() + start * config_.classes, static_cast<Eigen::Index>(b),
                          static_cast<Eigen::Index>(config_.classes));
    lg.noalias() = hidden * as_matrix(output_.kernel, config_.dense_units, config_.classes);
    lg.rowwise() += as_row(output_.bias);
  }
  return out;
}

double CnnModel::accumulate_gradients(std::span<const double> samples, std::span<const int> labels,
                                      std::size_t* correct) {
  const std::size_t b = labels.size();
  if (b == 0 || samples.size() != b * input_size()) throw InvalidArgument("cnn: batch shape mismatch");
  const std::size_t hdim = config_.dense_units, ncls = config_.classes;
  Cache cache;
  cache.resize(*this, b);
  for (std::size_t s = 0; s < b; ++s) forward_sample(samples.data() + s * input_size(), cache, s);

  RowMat hidden = cache.flat * as_matrix(hidden_.kernel, flat_size(), hdim);
  hidden.rowwise() += as_row(hidden_.bias);
  hidden = hidden.cwiseMax(0.0);
  RowMat logits = hidden * as_matrix(output_.kernel, hdim, ncls);
  logits.rowwise() += as_row(output_.bias);

  const double inv_b = 1.0 / static_cast<double>(b);
  RowMat dlogits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(ncls));
  double loss = 0.0;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < b; ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    const int label = labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= ncls) throw InvalidArgument("cnn: label index out of range");
    const nn::SoftmaxXent sx = nn::softmax_xent(std::span<const double>(logits.row(row).data(), ncls),
                                                static_cast<std::size_t>(label));
    loss += sx.loss;
    const auto best = std::max_element(sx.probabilities.begin(), sx.probabilities.end()) - sx.probabilities.begin();
    if (best == label) ++hits;
    for (std::size_t j = 0; j < ncls; ++j) {
      dlogits(row, static_cast<Eigen::Index>(j)) =
          (sx.probabilities[j] - (static_cast<int>(j) == label ? 1.0 : 0.0)) * inv_b;
    }
  }
  if (correct != nullptr) *correct = hits;

  as_matrix(output_.grad_kernel, hdim, ncls).noalias() += hidden.transpose() * dlogits;
  nn::add_column_sums(dlogits.data(), b, ncls, output_.grad_bias.data());
  RowMat dhidden = dlogits * as_matrix(output_.kernel, hdim, ncls).transpose();
  dhidden = (hidden.array() > 0.0).select(dhidden, 0.0);
  as_matrix(hidden_.grad_kernel, flat_size(), hdim).noalias() += cache.flat.transpose() * dhidden;
  nn::add_column_sums(dhidden.data(), b, hdim, hidden_.grad_bias.data());
  const RowMat dflat = dhidden * as_matrix(hidden_.kernel, flat_size(), hdim).transpose();

  std::vector<double> dpool, dact, dcols, din;
  for (std::size_t s = 0; s < b; ++s) {
    dpool.assign(dflat.row(static_cast<Eigen::Index>(s)).data(), dflat.row(static_cast<Eigen::Index>(s)).data() + flat_size());
    for (std::size_t l = convs_.size(); l-- > 0;) {
      const MapShape& sh = shapes_[l];
      const std::size_t p = (sh.h - 2) * (sh.w - 2);
      const std::size_t k9 = 9 * sh.c;
      const std::size_t k = convs_[l].out_channels();
      const std::size_t pooled = shapes_[l + 1].size();
      const double* act = cache.act[l].data() + s * p * k;
      dact.assign(p * k, 0.0);
      nn::maxpool2_backward(dpool.data(), pooled, cache.argmax[l].data() + s * pooled, dact.data());
      for (std::size_t i = 0; i < dact.size(); ++i) {
        if (act[i] <= 0.0) dact[i] = 0.0;
      }
      Eigen::Map<const RowMat> dm(dact.data(), static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
      Eigen::Map<const RowMat> cm(cache.cols[l].data() + s * p * k9, static_cast<Eigen::Index>(p),
                                  static_cast<Eigen::Index>(k9));
      as_matrix(convs_[l].grad_kernels, k9, k).noalias() += cm.transpose() * dm;
      nn::add_column_sums(dact.data(), p, k, convs_[l].grad_bias.data());
      if (l == 0) break;
      dcols.resize(p * k9);
      Eigen::Map<RowMat>(dcols.data(), static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k9)).noalias() =
          dm * as_matrix(convs_[l].kernels, k9, k).transpose();
      din.assign(sh.size(), 0.0);
      col2im_add(dcols.data(), sh.h, sh.w, sh.c, din.data());
      dpool.swap(din);
    }
  }
  return loss * inv_b;
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

std::string join(const std::array<double, data::kChannels>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ",") + format_double(x);
  return out;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

void put_model_meta(const CnnModel& m, nn::Checkpoint& ck, const std::string& prefix) {
  const CnnConfig& c = m.config();
  ck.meta[prefix + "height"] = std::to_string(c.height);
  ck.meta[prefix + "width"] = std::to_string(c.width);
  ck.meta[prefix + "conv_channels"] = join(c.conv_channels);
  ck.meta[prefix + "dense_units"] = std::to_string(c.dense_units);
  ck.meta[prefix + "classes"] = std::to_string(c.classes);
  ck.meta[prefix + "norm_mean"] = join(m.normalization.mean);
  ck.meta[prefix + "norm_std"] = join(m.normalization.stddev);
}

void put_model_tensors(CnnModel& m, nn::Checkpoint& ck, const std::string& prefix) {
  for (const nn::Param& p : m.parameters()) ck.add(prefix + p.name, *p.value);
}

CnnModel read_model(const nn::Checkpoint& ck, const std::string& prefix, const std::string& tensor_prefix) {
  CnnConfig c;
  c.height = std::stoull(ck.get(prefix + "height"));
  c.width = std::stoull(ck.get(prefix + "width"));
  c.conv_channels.clear();
  for (const std::string& s : split_csv(ck.get(prefix + "conv_channels"))) c.conv_channels.push_back(std::stoull(s));
  c.dense_units = std::stoull(ck.get(prefix + "dense_units"));
  c.classes = std::stoull(ck.get(prefix + "classes"));
  CnnModel m = build_cnn(c, 0);
  const auto mean = split_csv(ck.get(prefix + "norm_mean"));
  const auto sd = split_csv(ck.get(prefix + "norm_std"));
  if (mean.size() != data::kChannels || sd.size() != data::kChannels) {
    throw IoError("classifier checkpoint: normalization must list 10 channels");
  }
  for (std::size_t i = 0; i < data::kChannels; ++i) {
    m.normalization.mean[i] = parse_double(mean[i]);
    m.normalization.stddev[i] = parse_double(sd[i]);
  }
  for (const nn::Param& p : m.parameters()) {
    const nn::Tensor& t = ck.tensor(tensor_prefix + p.name);
    if (t.shape() != p.value->shape()) throw IoError("classifier checkpoint: tensor '" + p.name + "' has the wrong shape");
    *p.value = t;
  }
  return m;
}

}  // namespace

nn::Checkpoint CnnModel::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.meta["kind"] = "cnn-classifier";
  put_model_meta(*this, ck, "");
  put_model_tensors(const_cast<CnnModel&>(*this), ck, "");
  return ck;
}

CnnModel CnnModel::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.get("kind") != "cnn-classifier") throw IoError("checkpoint is not a CNN classifier");
  return read_model(ck, "", "");
}

void CnnModel::save(const std::filesystem::path& path) const { nn::save_checkpoint(to_checkpoint(), path); }

CnnModel CnnModel::load(const std::filesystem::path& path) { return from_checkpoint(nn::load_checkpoint(path)); }

Prediction predict_label(const CnnModel& model, std::span<const double> sample) {
  if (sample.size() != model.input_size()) {
    throw InvalidArgument("predict_label: expected " + std::to_string(model.input_size()) + " values, got " +
                          std::to_string(sample.size()));
  }
  Prediction p;
  p.probabilities = nn::softmax(model.logits(sample, 1));
  p.label = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                             p.probabilities.begin()) + 1;
  return p;
}

// ---------------------------------------------------------------- sources

MemorySource::MemorySource(std::size_t sample_size, std::vector<double> values, std::vector<int> labels)
    : sample_size_(sample_size), values_(std::move(values)), labels_(std::move(labels)) {
  if (values_.size() != sample_size_ * labels_.size()) throw InvalidArgument("MemorySource: size mismatch");
}

void MemorySource::fill(std::size_t index, double* out) const {
  std::copy_n(values_.data() + index * sample_size_, sample_size_, out);
}

std::vector<data::WindowRef> shuffle_labels(std::vector<data::WindowRef> refs, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> draw(1, classes);
  for (data::WindowRef& r : refs) r.label = draw(rng);
  return refs;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("classifier: batch_size must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw InvalidArgument("classifier: validation_fraction must lie in [0, 1)");
  }
  if (!(optimizer.learning_rate > 0.0)) throw InvalidArgument("classifier: learning_rate must be > 0");
}

std::vector<std::size_t> validation_indices(std::size_t count, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x5bd1e9955bd1e995ULL);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count)));
  order.resize(n_val);
  std::sort(order.begin(), order.end());
  return order;
}

TrainingState start_training(CnnModel model, const TrainConfig& config) {
  config.validate();
  TrainingState st;
  st.best = model;
  st.model = std::move(model);
  st.optimizer = nn::Optimizer(config.optimizer);
  return st;
}

namespace {

struct Scores {
  double loss = 0.0;
  double accuracy = 0.0;
};

Scores score(const CnnModel& model, const SampleSource& source, std::span<const std::size_t> indices) {
  if (indices.empty()) return {};
  constexpr std::size_t kChunk = 256;
  const std::size_t n_in = source.sample_size();
  std::vector<double> buf;
  double loss = 0.0;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t b = std::min(kChunk, indices.size() - start);
    buf.resize(b * n_in);
    for (std::size_t s = 0; s < b; ++s) source.fill(indices[start + s], buf.data() + s * n_in);
    const std::vector<double> lg = model.logits(buf, b);
    const std::size_t ncls = model.config().classes;
    for (std::size_t s = 0; s < b; ++s) {
      const auto label = static_cast<std::size_t>(source.label(indices[start + s]) - 1);
      const std::span<const double> row(lg.data() + s * ncls, ncls);
      const nn::SoftmaxXent sx = nn::softmax_xent(row, label);
      loss += sx.loss;
      if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == label) ++hits;
    }
  }
  const auto n = static_cast<double>(indices.size());
  return {loss / n, 100.0 * static_cast<double>(hits) / n};
}

}  // namespace

void train_classifier(TrainingState& st, const SampleSource& train, const TrainConfig& config, std::uint64_t seed,
                      const EpochCallback& on_epoch) {
  config.validate();
  if (train.size() == 0) throw InvalidArgument("train_classifier: empty training set");
  if (train.sample_size() != st.model.input_size()) {
    throw InvalidArgument("train_classifier: samples hold " + std::to_string(train.sample_size()) +
                          " values but the model expects " + std::to_string(st.model.input_size()));
  }
  const std::vector<std::size_t> val = validation_indices(train.size(), config.validation_fraction, seed);
  std::vector<std::size_t> fit;
  fit.reserve(train.size() - val.size());
  for (std::size_t i = 0, v = 0; i < train.size(); ++i) {
    if (v < val.size() && val[v] == i) {
      ++v;
      continue;
    }
    fit.push_back(i);
  }
  if (fit.empty()) throw InvalidArgument("train_classifier: validation slice leaves no training samples");
  const std::vector<std::size_t>& val_or_fit = val.empty() ? fit : val;

  const std::size_t n_in = train.sample_size();
  std::vector<double> batch;
  std::vector<int> labels;
  std::vector<nn::Param> params = st.model.parameters();

  while (!st.stopped && st.epochs_done < config.max_epochs) {
    const std::size_t epoch = st.epochs_done + 1;
    std::vector<std::size_t> order = fit;
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      batch.resize(b * n_in);
      labels.resize(b);
      for (std::size_t s = 0; s < b; ++s) {
        train.fill(order[start + s], batch.data() + s * n_in);
        labels[s] = train.label(order[start + s]) - 1;
      }
      st.model.zero_grad();
      std::size_t batch_hits = 0;
      const double loss = st.model.accumulate_gradients(batch, labels, &batch_hits);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("classifier loss became non-finite in epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(b);
      hits += batch_hits;
      st.optimizer.step(params);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(order.size());
    const Scores v = score(st.model, train, val_or_fit);
    m.validation_loss = v.loss;
    m.validation_accuracy = v.accuracy;
    if (!std::isfinite(m.validation_loss)) {
      throw TrainingDiverged("classifier validation loss became non-finite in epoch " + std::to_string(epoch));
    }
    st.curve.push_back(m);
    st.epochs_done = epoch;
    if (m.validation_accuracy > st.best_accuracy) {
      st.best_accuracy = m.validation_accuracy;
      st.best_epoch = epoch;
      st.best = st.model;
      st.stale_epochs = 0;
    } else if (++st.stale_epochs >= config.patience) {
      st.stopped = true;
    }
    if (on_epoch) on_epoch(m);
  }
}

nn::Checkpoint TrainingState::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.meta["kind"] = "cnn-training-state";
  put_model_meta(model, ck, "model.");
  put_model_meta(best, ck, "best.");
  put_model_tensors(const_cast<CnnModel&>(model), ck, "model/");
  put_model_tensors(const_cast<CnnModel&>(best), ck, "best/");
  const nn::OptimizerConfig& oc = optimizer.config();
  ck.meta["optimizer"] = nn::to_string(oc.kind);
  ck.meta["learning_rate"] = format_double(oc.learning_rate);
  ck.meta["momentum"] = format_double(oc.momentum);
  ck.meta["beta1"] = format_double(oc.beta1);
  ck.meta["beta2"] = format_double(oc.beta2);
  ck.meta["epsilon"] = format_double(oc.epsilon);
  ck.meta["optimizer_steps"] = std::to_string(optimizer.steps());
  ck.meta["slot_count"] = std::to_string(optimizer.first_slots().size());
  for (std::size_t i = 0; i < optimizer.first_slots().size(); ++i) {
    ck.add("opt.first." + std::to_string(i), optimizer.first_slots()[i]);
  }
  for (std::size_t i = 0; i < optimizer.second_slots().size(); ++i) {
    ck.add("opt.second." + std::to_string(i), optimizer.second_slots()[i]);
  }
  ck.meta["epochs_done"] = std::to_string(epochs_done);
  ck.meta["best_epoch"] = std::to_string(best_epoch);
  ck.meta["best_accuracy"] = format_double(best_accuracy);
  ck.meta["stale_epochs"] = std::to_string(stale_epochs);
  ck.meta["stopped"] = stopped ? "1" : "0";
  std::string curve_text;
  for (const EpochMetrics& m : curve) {
    curve_text += std::to_string(m.epoch) + ':' + format_double(m.train_loss) + ':' + format_double(m.train_accuracy) +
                  ':' + format_double(m.validation_loss) + ':' + format_double(m.validation_accuracy) + ';';
  }
  ck.meta["curve"] = curve_text;
  return ck;
}

TrainingState TrainingState::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.get("kind") != "cnn-training-state") throw IoError("checkpoint is not a classifier training state");
  TrainingState st;
  st.model = read_model(ck, "model.", "model/");
  st.best = read_model(ck, "best.", "best/");
  nn::OptimizerConfig oc;
  oc.kind = nn::parse_optimizer_kind(ck.get("optimizer"));
  oc.learning_rate = parse_double(ck.get("learning_rate"));
  oc.momentum = parse_double(ck.get("momentum"));
  oc.beta1 = parse_double(ck.get("beta1"));
  oc.beta2 = parse_double(ck.get("beta2"));
  oc.epsilon = parse_double(ck.get("epsilon"));
  st.optimizer = nn::Optimizer(oc);
  const std::size_t slots = std::stoull(ck.get("slot_count"));
  std::vector<nn::Tensor> first, second;
  for (std::size_t i = 0; i < slots; ++i) first.push_back(ck.tensor("opt.first." + std::to_string(i)));
  if (ck.has_tensor("opt.second.0")) {
    for (std::size_t i = 0; i < slots; ++i) second.push_back(ck.tensor("opt.second." + std::to_string(i)));
  }
  if (slots > 0) st.optimizer.restore(std::stoull(ck.get("optimizer_steps")), std::move(first), std::move(second));
  st.epochs_done = std::stoull(ck.get("epochs_done"));
  st.best_epoch = std::stoull(ck.get("best_epoch"));
  st.best_accuracy = parse_double(ck.get("best_accuracy"));
  st.stale_epochs = std::stoull(ck.get("stale_epochs"));
  st.stopped = ck.get("stopped") == "1";
  std::stringstream ss(ck.get("curve"));
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    std::stringstream fs(item);
    std::string f[5];
    for (std::string& s : f) std::getline(fs, s, ':');
    st.curve.push_back({std::stoull(f[0]), parse_double(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4])});
  }
  return st;
}

// ---------------------------------------------------------------- evaluation

std::size_t EvalReport::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return n;
}

std::size_t EvalReport::correct() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < confusion.size(); ++i) n += confusion[i][i];
  return n;
}

double EvalReport::accuracy() const {
  const std::size_t n = total();
  return n ? 100.0 * static_cast<double>(correct()) / static_cast<double>(n) : 0.0;
}

std::size_t EvalReport::true_positive() const {
  std::size_t n = 0;
  for (std::size_t t = 1; t < confusion.size(); ++t) {
    for (std::size_t p = 1; p < confusion.size(); ++p) n += confusion[t][p];
  }
  return n;
}

std::size_t EvalReport::false_positive() const {
  std::size_t n = 0;
  for (std::size_t p = 1; p < confusion.size(); ++p) n += confusion[0][p];
  return n;
}

std::size_t EvalReport::false_negative() const {
  std::size_t n = 0;
  for (std::size_t t = 1; t < confusion.size(); ++t) n += confusion[t][0];
  return n;
}

double EvalReport::precision() const {
  const std::size_t tp = true_positive(), fp = false_positive();
  return tp + fp ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
}

double EvalReport::recall() const {
  const std::size_t tp = true_positive(), fn = false_negative();
  return tp + fn ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
}

std::size_t EvalReport::label_count(int label) const {
  const auto& row = confusion.at(static_cast<std::size_t>(label - 1));
  return std::accumulate(row.begin(), row.end(), std::size_t{0});
}

double EvalReport::label_accuracy(int label) const {
  const std::size_t n = label_count(label);
  const auto i = static_cast<std::size_t>(label - 1);
  return n ? 100.0 * static_cast<double>(confusion[i][i]) / static_cast<double>(n) : 0.0;
}

std::vector<ConfusedPair> EvalReport::top_confused_pairs(std::size_t k) const {
  std::vector<ConfusedPair> pairs;
  for (std::size_t a = 0; a < confusion.size(); ++a) {
    for (std::size_t b = a + 1; b < confusion.size(); ++b) {
      const std::size_t n = confusion[a][b] + confusion[b][a];
      if (n > 0) pairs.push_back({static_cast<int>(a + 1), static_cast<int>(b + 1), n});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const ConfusedPair& x, const ConfusedPair& y) {
    return x.count > y.count;
  });
  if (pairs.size() > k) pairs.resize(k);
  return pairs;
}

EvalReport report_from_predictions(std::span<const int> truth, std::span<const int> predicted, int classes) {
  if (truth.size() != predicted.size()) throw InvalidArgument("evaluate: truth and prediction counts differ");
  EvalReport r;
  r.classes = classes;
  r.confusion.assign(static_cast<std::size_t>(classes), std::vector<std::size_t>(static_cast<std::size_t>(classes), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 1 || truth[i] > classes || predicted[i] < 1 || predicted[i] > classes) {
      throw InvalidArgument("evaluate: label outside 1.." + std::to_string(classes));
    }
    ++r.confusion[static_cast<std::size_t>(truth[i] - 1)][static_cast<std::size_t>(predicted[i] - 1)];
  }
  return r;
}

std::vector<int> predict_all(const CnnModel& model, const SampleSource& source) {
  if (source.sample_size() != model.input_size()) {
    throw InvalidArgument("channel schema mismatch: samples hold " + std::to_string(source.sample_size()) +
                          " values, model expects " + std::to_string(model.input_size()));
  }
  constexpr std::size_t kChunk = 256;
  const std::size_t n_in = source.sample_size();
  const std::size_t ncls = model.config().classes;
  std::vector<int> out;
  out.reserve(source.size());
  std::vector<double> buf;
  for (std::size_t start = 0; start < source.size(); start += kChunk) {
    const std::size_t b = std::min(kChunk, source.size() - start);
    buf.resize(b * n_in);
    for (std::size_t s = 0; s < b; ++s) source.fill(start + s, buf.data() + s * n_in);
    const std::vector<double> lg = model.logits(buf, b);
    for (std::size_t s = 0; s < b; ++s) {
      const double* row = lg.data() + s * ncls;
      out.push_back(static_cast<int>(std::max_element(row, row + ncls) - row) + 1);
    }
  }
  return out;
}

EvalReport evaluate(const CnnModel& model, const SampleSource& source) {
  if (source.size() == 0) throw InvalidArgument("evaluate: empty test set");
  const std::vector<int> predicted = predict_all(model, source);
  std::vector<int> truth(source.size());
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = source.label(i);
  return report_from_predictions(truth, predicted, static_cast<int>(model.config().classes));
}

void write_eval_report(const EvalReport& r, const std::filesystem::path& dir, const std::string& stem,
                       const std::string& title) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& suffix) {
    const std::filesystem::path p = dir / (stem + suffix);
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
    return out;
  };
  auto pct = [](double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << v;
    return s.str();
  };
  {
    std::ofstream out = open("_report.txt");
    out << title << '\n'
        << "samples: " << r.total() << '\n'
        << "accuracy: " << pct(r.accuracy()) << "%\n"
        << "fault precision: " << pct(r.precision()) << "% (tp " << r.true_positive() << ", fp " << r.false_positive()
        << ")\n"
        << "fault recall: " << pct(r.recall()) << "% (fn " << r.false_negative() << ")\n"
        << "per-label accuracy:\n";
    for (int l = 1; l <= r.classes; ++l) {
      out << "  label " << l << ": " << pct(r.label_accuracy(l)) << "% of " << r.label_count(l) << '\n';
    }
    out << "top confused pairs:\n";
    for (const ConfusedPair& p : r.top_confused_pairs(5)) {
      out << "  (" << p.a << ", " << p.b << "): " << p.count << '\n';
    }
  }
  {
    std::ofstream out = open("_confusion.csv");
    out << "truth";
    for (int l = 1; l <= r.classes; ++l) out << ",pred" << l;
    out << '\n';
    for (int t = 1; t <= r.classes; ++t) {
      out << t;
      for (std::size_t n : r.confusion[static_cast<std::size_t>(t - 1)]) out << ',' << n;
      out << '\n';
    }
  }
  {
    std::ofstream out = open("_per_label.csv");
    out << "label,count,correct,accuracy_pct\n";
    for (int l = 1; l <= r.classes; ++l) {
      const auto i = static_cast<std::size_t>(l - 1);
      out << l << ',' << r.label_count(l) << ',' << r.confusion[i][i] << ',' << format_double(r.label_accuracy(l))
          << '\n';
    }
  }
}

}  // namespace propfault::clf
