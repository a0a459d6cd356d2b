#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "propfault/classifier.hpp"
#include "propfault/datagen.hpp"
#include "propfault/propeller.hpp"
#include "propfault/simcore.hpp"

using namespace propfault;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// One minibatch of the two-layer LSTM regressor, forward and backward.
void BM_RegressorBatch(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  prop::PropellerRegressor model(prop::PropellerCondition::Normal, prop::RegressorConfig{}, 1);
  const auto windows = uniform(batch * model.window(), 2);
  const auto targets = uniform(batch * 2, 3);
  for (auto _ : state) {
    model.zero_grad();
    benchmark::DoNotOptimize(model.accumulate_batch(windows, targets, batch));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_RegressorBatch)->Arg(1)->Arg(32);

// Single-window inference as used inside the flight loop.
void BM_RegressorPredict(benchmark::State& state) {
  prop::PropellerRegressor model(prop::PropellerCondition::Bent, prop::RegressorConfig{}, 1);
  const std::vector<double> window(model.window(), 600.0);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(window));
}
BENCHMARK(BM_RegressorPredict);

void BM_CnnForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto model = clf::build_cnn({}, 1);
  const auto samples = uniform(batch * model.input_size(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.logits(samples, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_CnnForward)->Arg(1)->Arg(32);

void BM_CnnTrainStep(benchmark::State& state) {
  auto model = clf::build_cnn({}, 1);
  const std::size_t batch = 32;
  const auto samples = uniform(batch * model.input_size(), 5);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % 16);
  for (auto _ : state) {
    model.zero_grad();
    benchmark::DoNotOptimize(model.accumulate_gradients(samples, labels));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_CnnTrainStep);

void BM_Rk4Step(benchmark::State& state) {
  const sim::QuadParams params;
  sim::QuadState s;
  s.z = 2.0;
  const sim::BodyWrench w{params.mass * params.gravity, 0.0, 0.0, 5e-4};
  for (auto _ : state) {
    s = sim::step_rk4(s, w, params, 0.001);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_Rk4Step);

// Ten simulated seconds of closed-loop flight with analytic rotors.
void BM_ShortMission(benchmark::State& state) {
  const auto bank = data::ModelBank::analytic(prop::DegradationConfig{});
  data::MissionSetup setup;
  setup.waypoints = data::waypoint_set("A");
  setup.waypoint_set = "A";
  setup.mission.duration = 10.0;
  const auto scenario = data::parse_scenario_code("NBNC");
  for (auto _ : state) benchmark::DoNotOptimize(data::run_mission(scenario, setup, bank, 7));
}
BENCHMARK(BM_ShortMission)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
