#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "propfault/classifier.hpp"
#include "propfault/error.hpp"
#include "propfault/nn/gradcheck.hpp"
#include "propfault/nn/loss.hpp"

using namespace propfault;
using clf::CnnConfig;

namespace {

CnnConfig small_config() {
  CnnConfig cfg;
  cfg.height = 12;
  cfg.width = 10;
  cfg.conv_channels = {2, 3};
  cfg.dense_units = 5;
  cfg.classes = 4;
  return cfg;
}

std::vector<double> random_samples(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(count * size);
  for (double& x : v) x = n(rng);
  return v;
}

clf::MemorySource random_source(std::size_t count, const CnnConfig& cfg, std::uint64_t seed) {
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % cfg.classes) + 1;
  const std::size_t size = cfg.height * cfg.width;
  return clf::MemorySource(size, random_samples(count, size, seed), std::move(labels));
}

// Mean cross-entropy over a batch, as a closure for finite differences.
double batch_loss(const clf::CnnModel& model, std::span<const double> samples, std::span<const int> labels) {
  const std::size_t classes = model.config().classes;
  const auto logits = model.logits(samples, labels.size());
  double loss = 0.0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    loss += nn::softmax_xent(std::span(logits).subspan(s * classes, classes), static_cast<std::size_t>(labels[s])).loss;
  }
  return loss / static_cast<double>(labels.size());
}

clf::EvalReport report_of(std::vector<int> truth, std::vector<int> predicted) {
  return clf::report_from_predictions(truth, predicted);
}

}  // namespace

TEST(Cnn, ZeroInputGivesDistribution) {
  const auto model = clf::build_cnn({}, 1);
  const std::vector<double> zero(model.input_size(), 0.0);
  const auto p = clf::predict_label(model, zero);
  ASSERT_EQ(p.probabilities.size(), 16u);
  double sum = 0.0;
  for (double v : p.probabilities) {
    EXPECT_TRUE(std::isfinite(v));
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_GE(p.label, 1);
  EXPECT_LE(p.label, 16);
}

TEST(Cnn, SeededInitialization) {
  EXPECT_EQ(clf::build_cnn({}, 7).to_checkpoint(), clf::build_cnn({}, 7).to_checkpoint());
  EXPECT_NE(clf::build_cnn({}, 7).to_checkpoint(), clf::build_cnn({}, 8).to_checkpoint());
}

TEST(Cnn, ParameterCountMatchesLayerStack) {
  // 100x10 -> conv 98x8x32 -> pool 49x4 -> conv 47x2x64 -> pool 23x1 -> 1472.
  const std::size_t conv1 = 3 * 3 * 1 * 32 + 32;
  const std::size_t conv2 = 3 * 3 * 32 * 64 + 64;
  const std::size_t dense = 23 * 1 * 64 * 128 + 128;
  const std::size_t out = 128 * 16 + 16;
  const auto model = clf::build_cnn({}, 0);
  EXPECT_EQ(model.flat_size(), 1472u);
  EXPECT_EQ(model.parameter_count(), conv1 + conv2 + dense + out);
  EXPECT_EQ(clf::expected_parameter_count({}), conv1 + conv2 + dense + out);
}

TEST(Cnn, RejectsCollapsedShapes) {
  CnnConfig cfg;
  cfg.conv_channels = {32, 64, 128};  // 23x1 map cannot take a third 3x3 kernel
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = CnnConfig{};
  cfg.width = 4;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  // A wider input leaves room for a third block.
  cfg = CnnConfig{};
  cfg.width = 30;
  cfg.conv_channels = {8, 16, 32};
  EXPECT_NO_THROW(cfg.validate());
  const auto model = clf::build_cnn({}, 0);
  EXPECT_THROW(clf::predict_label(model, std::vector<double>(99, 0.0)), InvalidArgument);
}

TEST(Cnn, GradientOfSmallNetwork) {
  auto model = clf::build_cnn(small_config(), 3);
  const auto samples = random_samples(2, model.input_size(), 4);
  const std::vector<int> labels{1, 3};
  model.zero_grad();
  model.accumulate_gradients(samples, labels);
  auto loss = [&] { return batch_loss(model, samples, labels); };
  for (const nn::Param& p : model.parameters()) {
    const auto r = nn::check_gradient(loss, p.value->values(), p.grad->values());
    EXPECT_LT(r.max_relative_error, 1e-4) << p.name;
  }
}

TEST(Cnn, GradientOfFullNetworkAtSampledWeights) {
  auto model = clf::build_cnn({}, 5);
  const auto sample = random_samples(1, model.input_size(), 6);
  const std::vector<int> label{9};
  model.zero_grad();
  model.accumulate_gradients(sample, label);
  auto loss = [&] { return batch_loss(model, sample, label); };
  std::mt19937_64 rng(7);
  for (const nn::Param& p : model.parameters()) {
    const std::size_t n = p.value->size();
    for (int probe = 0; probe < 3; ++probe) {
      const std::size_t len = std::min<std::size_t>(8, n);
      const std::size_t at = std::uniform_int_distribution<std::size_t>(0, n - len)(rng);
      const auto r = nn::check_gradient(loss, p.value->values().subspan(at, len), p.grad->values().subspan(at, len));
      EXPECT_LT(r.max_relative_error, 1e-4) << p.name << " @" << at;
    }
  }
}

TEST(Cnn, IdenticalSamplesIdenticalOutputs) {
  const auto model = clf::build_cnn({}, 2);
  const auto x = random_samples(1, model.input_size(), 1);
  const auto a = clf::predict_label(model, x), b = clf::predict_label(model, x);
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.probabilities, b.probabilities);
}

TEST(Cnn, GradientIgnoresMemoryPlacement) {
  const std::vector<int> labels{0, 5, 9, 15};
  std::vector<double> reference;
  for (std::size_t shift = 0; shift < 8; ++shift) {
    std::vector<double> pad(5 * shift + 1);
    auto model = clf::build_cnn({}, 6);
    const auto samples = random_samples(labels.size(), model.input_size(), 8);
    std::vector<double> x(samples.size() + 8);
    std::copy(samples.begin(), samples.end(), x.begin() + static_cast<std::ptrdiff_t>(shift));
    model.zero_grad();
    std::vector<double> got{model.accumulate_gradients({x.data() + shift, samples.size()}, labels)};
    for (const nn::Param& p : model.parameters()) got.insert(got.end(), p.grad->values().begin(), p.grad->values().end());
    if (shift == 0) reference = got;
    EXPECT_TRUE(got == reference) << "shift " << shift;
  }
}

TEST(Cnn, CheckpointRoundTrip) {
  auto model = clf::build_cnn(small_config(), 9);
  model.normalization.mean[3] = 0.25;
  const auto back = clf::CnnModel::from_checkpoint(nn::deserialize_checkpoint(nn::serialize_checkpoint(model.to_checkpoint())));
  EXPECT_EQ(back.to_checkpoint(), model.to_checkpoint());
  EXPECT_EQ(back.normalization, model.normalization);
}

TEST(Training, OverfitsOneBatch) {
  auto cfg = small_config();
  cfg.conv_channels = {8, 16};
  cfg.dense_units = 32;
  const auto source = random_source(32, cfg, 11);
  clf::TrainConfig tc;
  tc.validation_fraction = 0.0;
  tc.max_epochs = 300;
  tc.patience = 300;
  tc.optimizer.learning_rate = 0.01;
  auto st = clf::start_training(clf::build_cnn(cfg, 1), tc);
  clf::train_classifier(st, source, tc, 1);
  std::vector<double> x(source.sample_size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    source.fill(i, x.data());
    EXPECT_EQ(clf::predict_label(st.best, x).label, source.label(i)) << "sample " << i;
  }
}

TEST(Training, SeparatesNormalFromAllFaulty) {
  const auto bank = data::ModelBank::analytic(prop::DegradationConfig{});
  data::MissionSetup setup;
  setup.waypoints = data::waypoint_set("A");
  std::vector<data::FlightLog> logs{data::run_mission(data::draw_scenario(1, 3), setup, bank, 3),
                                    data::run_mission(data::draw_scenario(16, 3), setup, bank, 3)};
  const auto ds = data::window_dataset(logs, 100, 5);
  const auto norm = data::compute_normalization(ds, ds.windows());
  const clf::WindowSource source(ds, ds.windows(), norm);
  clf::TrainConfig tc;
  tc.max_epochs = 20;
  auto st = clf::start_training(clf::build_cnn({}, 4), tc);
  clf::train_classifier(st, source, tc, 4);
  ASSERT_LE(st.curve.size(), 20u);
  EXPECT_GE(st.curve.back().train_accuracy, 99.0);
  const auto report = clf::evaluate(st.best, source);
  EXPECT_GE(report.accuracy(), 99.0);
}

TEST(Training, ResumeReplaysTheSameTrajectory) {
  const auto cfg = small_config();
  const auto source = random_source(64, cfg, 12);
  clf::TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 4;
  tc.patience = 10;
  auto straight = clf::start_training(clf::build_cnn(cfg, 2), tc);
  clf::train_classifier(straight, source, tc, 5);

  clf::TrainConfig half = tc;
  half.max_epochs = 2;
  auto first = clf::start_training(clf::build_cnn(cfg, 2), half);
  clf::train_classifier(first, source, half, 5);
  auto resumed = clf::TrainingState::from_checkpoint(nn::deserialize_checkpoint(nn::serialize_checkpoint(first.to_checkpoint())));
  clf::train_classifier(resumed, source, tc, 5);

  ASSERT_EQ(resumed.curve.size(), straight.curve.size());
  for (std::size_t e = 0; e < straight.curve.size(); ++e) {
    EXPECT_EQ(resumed.curve[e].train_loss, straight.curve[e].train_loss);
    EXPECT_EQ(resumed.curve[e].validation_accuracy, straight.curve[e].validation_accuracy);
  }
  EXPECT_EQ(resumed.model.to_checkpoint(), straight.model.to_checkpoint());
}

TEST(Training, ZeroEpochsLeavesModelUntouched) {
  const auto cfg = small_config();
  const auto initial = clf::build_cnn(cfg, 3);
  clf::TrainConfig tc;
  tc.max_epochs = 0;
  auto st = clf::start_training(initial, tc);
  clf::train_classifier(st, random_source(16, cfg, 1), tc, 1);
  EXPECT_EQ(st.epochs_done, 0u);
  EXPECT_EQ(st.model.to_checkpoint(), initial.to_checkpoint());
}

TEST(Training, UntrainedModelIsAtChance) {
  CnnConfig cfg = small_config();
  cfg.classes = 16;
  const auto source = random_source(1600, cfg, 3);
  const auto report = clf::evaluate(clf::build_cnn(cfg, 3), source);
  EXPECT_NEAR(report.accuracy(), 6.25, 5.0);
}

TEST(Training, ShuffledLabelsAreSeededAndInRange) {
  std::vector<data::WindowRef> refs(500);
  for (std::size_t i = 0; i < refs.size(); ++i) refs[i] = {0, static_cast<std::uint32_t>(i), 1};
  const auto a = clf::shuffle_labels(refs, 16, 9);
  EXPECT_EQ(a, clf::shuffle_labels(refs, 16, 9));
  std::set<int> seen;
  for (const auto& r : a) {
    EXPECT_GE(r.label, 1);
    EXPECT_LE(r.label, 16);
    seen.insert(r.label);
  }
  EXPECT_EQ(seen.size(), 16u);
}

TEST(Evaluation, PerfectPredictor) {
  std::vector<int> truth;
  for (int l = 1; l <= 16; ++l) truth.insert(truth.end(), 5, l);
  const auto r = report_of(truth, truth);
  EXPECT_DOUBLE_EQ(r.accuracy(), 100.0);
  EXPECT_DOUBLE_EQ(r.precision(), 100.0);
  EXPECT_DOUBLE_EQ(r.recall(), 100.0);
  for (int a = 0; a < 16; ++a) {
    for (int b = 0; b < 16; ++b) EXPECT_EQ(r.confusion[a][b], a == b ? 5u : 0u);
  }
}

TEST(Evaluation, ConstantNormalPredictor) {
  std::vector<int> truth;
  for (int l = 1; l <= 16; ++l) truth.insert(truth.end(), 10, l);
  const auto r = report_of(truth, std::vector<int>(truth.size(), 1));
  EXPECT_DOUBLE_EQ(r.accuracy(), 6.25);
  EXPECT_DOUBLE_EQ(r.recall(), 0.0);
  EXPECT_EQ(r.total(), 160u);
}

TEST(Evaluation, BinaryCollapseOfThreeSamples) {
  const auto r = report_of({1, 5, 5}, {1, 5, 13});
  EXPECT_NEAR(r.accuracy(), 200.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.precision(), 100.0);
  EXPECT_DOUBLE_EQ(r.recall(), 100.0);
  EXPECT_DOUBLE_EQ(r.label_accuracy(5), 50.0);
}

TEST(Evaluation, InvariantsOnRandomPredictions) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> label(1, 16);
  std::vector<int> truth(2000), pred(2000);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = label(rng);
    pred[i] = rng() % 3 == 0 ? truth[i] : label(rng);
  }
  const auto r = report_of(truth, pred);
  EXPECT_EQ(r.total(), 2000u);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] != 1, p = pred[i] != 1;
    tp += t && p;
    fp += !t && p;
    fn += t && !p;
  }
  EXPECT_EQ(r.true_positive(), tp);
  EXPECT_EQ(r.false_positive(), fp);
  EXPECT_EQ(r.false_negative(), fn);
  for (int l = 1; l <= 16; ++l) {
    const auto& row = r.confusion[static_cast<std::size_t>(l - 1)];
    EXPECT_EQ(std::accumulate(row.begin(), row.end(), std::size_t{0}),
              static_cast<std::size_t>(std::count(truth.begin(), truth.end(), l)));
  }
}

TEST(Evaluation, TopConfusedPairsAreUnordered) {
  std::vector<int> truth, pred;
  auto add = [&](int t, int p, int n) {
    truth.insert(truth.end(), n, t);
    pred.insert(pred.end(), n, p);
  };
  add(1, 16, 4);
  add(16, 1, 3);
  add(2, 3, 5);
  add(4, 4, 50);
  add(9, 12, 2);
  const auto top = report_of(truth, pred).top_confused_pairs(3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].a, 1);
  EXPECT_EQ(top[0].b, 16);
  EXPECT_EQ(top[0].count, 7u);
  EXPECT_EQ(top[1].a, 2);
  EXPECT_EQ(top[1].b, 3);
  EXPECT_EQ(top[2].a, 9);
}

TEST(Evaluation, ReportFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "propfault_test_report";
  std::filesystem::create_directories(dir);
  clf::write_eval_report(report_of({1, 5, 5}, {1, 5, 13}), dir, "toy", "toy report");
  for (const char* f : {"toy_report.txt", "toy_confusion.csv", "toy_per_label.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
}
