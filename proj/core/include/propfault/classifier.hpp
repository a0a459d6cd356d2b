#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "propfault/datagen.hpp"
#include "propfault/nn/checkpoint.hpp"
#include "propfault/nn/layers.hpp"
#include "propfault/nn/optim.hpp"

namespace propfault::clf {

// conv(3x3) -> ReLU -> maxpool2 per entry of conv_channels, then
// flatten -> dense(dense_units) -> ReLU -> dense(classes) -> softmax.
struct CnnConfig {
  std::size_t height = data::kWindow;
  std::size_t width = data::kChannels;
  std::vector<std::size_t> conv_channels{32, 64};
  std::size_t dense_units = 128;
  std::size_t classes = static_cast<std::size_t>(data::kLabelCount);

  // Throws InvalidArgument when a conv block would see fewer than 3 rows or
  // columns, or a pool fewer than 2.
  void validate() const;
};

struct MapShape {
  std::size_t h = 0, w = 0, c = 0;
  std::size_t size() const { return h * w * c; }
};

class CnnModel {
 public:
  CnnModel() = default;

  const CnnConfig& config() const { return config_; }
  std::size_t input_size() const { return config_.height * config_.width; }
  std::size_t flat_size() const { return hidden_.in_dim(); }
  std::size_t parameter_count() const;

  // Input normalization the model was trained with.
  data::Normalization normalization;

  // Logits for `count` normalized samples stored back to back.
  std::vector<double> logits(std::span<const double> samples, std::size_t count) const;

  // Mean softmax cross-entropy over the batch; accumulates mean gradients.
  // labels are 0-based class indices. Optionally reports how many samples
  // were classified correctly.
  double accumulate_gradients(std::span<const double> samples, std::span<const int> labels,
                              std::size_t* correct = nullptr);

  std::vector<nn::Param> parameters();
  void zero_grad();

  nn::Checkpoint to_checkpoint() const;
  static CnnModel from_checkpoint(const nn::Checkpoint& checkpoint);
  void save(const std::filesystem::path& path) const;
  static CnnModel load(const std::filesystem::path& path);

  friend CnnModel build_cnn(const CnnConfig& config, std::uint64_t seed);

 private:
  struct Cache;
  void forward_sample(const double* sample, Cache& cache, std::size_t slot) const;

  CnnConfig config_;
  std::vector<MapShape> shapes_;  // input of each conv block, then the final pooled map
  std::vector<nn::Conv2d> convs_;
  nn::Dense hidden_;
  nn::Dense output_;
};

// Deterministic Xavier-uniform initialization from the seed.
CnnModel build_cnn(const CnnConfig& config = {}, std::uint64_t seed = 0);

// Closed-form parameter count of the declared stack.
std::size_t expected_parameter_count(const CnnConfig& config);

struct Prediction {
  int label = 0;  // 1-based
  std::vector<double> probabilities;
};

Prediction predict_label(const CnnModel& model, std::span<const double> sample);

// ---------------------------------------------------------------------------
// Samples.

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t sample_size() const = 0;
  virtual int label(std::size_t index) const = 0;  // 1-based
  virtual void fill(std::size_t index, double* out) const = 0;
};

// Windows of a dataset, z-scored on the fly. Optionally overrides labels.
class WindowSource final : public SampleSource {
 public:
  WindowSource(const data::WindowDataset& dataset, std::vector<data::WindowRef> refs, data::Normalization norm)
      : dataset_(&dataset), refs_(std::move(refs)), norm_(norm) {}

  std::size_t size() const override { return refs_.size(); }
  std::size_t sample_size() const override { return dataset_->window() * data::kChannels; }
  int label(std::size_t index) const override { return refs_[index].label; }
  void fill(std::size_t index, double* out) const override { dataset_->materialize(refs_[index], norm_, out); }

  std::vector<data::WindowRef>& refs() { return refs_; }

 private:
  const data::WindowDataset* dataset_;
  std::vector<data::WindowRef> refs_;
  data::Normalization norm_;
};

// Samples held in memory.
class MemorySource final : public SampleSource {
 public:
  MemorySource(std::size_t sample_size, std::vector<double> values, std::vector<int> labels);
  std::size_t size() const override { return labels_.size(); }
  std::size_t sample_size() const override { return sample_size_; }
  int label(std::size_t index) const override { return labels_[index]; }
  void fill(std::size_t index, double* out) const override;

 private:
  std::size_t sample_size_;
  std::vector<double> values_;
  std::vector<int> labels_;
};

// Replaces every label with a uniform draw from 1..classes.
std::vector<data::WindowRef> shuffle_labels(std::vector<data::WindowRef> refs, int classes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  std::size_t batch_size = 32;
  // Adam at 0.01 stalls near 40% accuracy on the windowed data; 0.001 converges in a few epochs.
  nn::OptimizerConfig optimizer{nn::OptimizerKind::Adam, 0.001};
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double validation_fraction = 0.1;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
};

// Everything needed to continue training where it stopped.
struct TrainingState {
  CnnModel model;  // weights after the last epoch
  CnnModel best;   // weights of the best validation epoch
  nn::Optimizer optimizer;
  std::size_t epochs_done = 0;
  std::size_t best_epoch = 0;
  double best_accuracy = -1.0;
  std::size_t stale_epochs = 0;
  bool stopped = false;  // early stopping fired
  std::vector<EpochMetrics> curve;

  nn::Checkpoint to_checkpoint() const;
  static TrainingState from_checkpoint(const nn::Checkpoint& checkpoint);
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Starts a fresh state for `model` with the given optimizer settings.
TrainingState start_training(CnnModel model, const TrainConfig& config);

// Runs epochs until max_epochs, or until validation accuracy has not improved
// for `patience` epochs. The validation slice and per-epoch shuffles are
// derived from the seed and the epoch number, so resuming a saved state
// replays the same trajectory as an uninterrupted run. Throws
// TrainingDiverged on a non-finite loss.
void train_classifier(TrainingState& state, const SampleSource& train, const TrainConfig& config, std::uint64_t seed,
                      const EpochCallback& on_epoch = {});

// Validation indices used by train_classifier for a source of this size.
std::vector<std::size_t> validation_indices(std::size_t count, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Evaluation.

struct ConfusedPair {
  int a = 0, b = 0;  // a < b, 1-based labels
  std::size_t count = 0;
};

struct EvalReport {
  int classes = data::kLabelCount;
  std::vector<std::vector<std::size_t>> confusion;  // [truth-1][prediction-1]

  std::size_t total() const;
  std::size_t correct() const;
  double accuracy() const;  // percent
  // Binary collapse: label 1 negative, all other labels positive (fault).
  std::size_t true_positive() const;
  std::size_t false_positive() const;
  std::size_t false_negative() const;
  double precision() const;  // percent, 0 when nothing was flagged
  double recall() const;     // percent, 0 when there are no faults
  std::size_t label_count(int label) const;
  double label_accuracy(int label) const;  // percent, 0 for absent labels
  // Unordered label pairs by off-diagonal count, ties broken by label order.
  std::vector<ConfusedPair> top_confused_pairs(std::size_t k) const;
};

EvalReport report_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                   int classes = data::kLabelCount);

// Predicted labels (1-based) for every sample in the source.
std::vector<int> predict_all(const CnnModel& model, const SampleSource& source);

EvalReport evaluate(const CnnModel& model, const SampleSource& source);

// Writes <stem>_report.txt, <stem>_confusion.csv, <stem>_per_label.csv into dir.
void write_eval_report(const EvalReport& report, const std::filesystem::path& dir, const std::string& stem,
                       const std::string& title);

}  // namespace propfault::clf
