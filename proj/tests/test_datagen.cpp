#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "propfault/datagen.hpp"
#include "propfault/error.hpp"

using namespace propfault;
using data::FaultScenario;
using data::FlightLog;
using prop::PropellerCondition;

namespace {

constexpr auto N = PropellerCondition::Normal;
constexpr auto B = PropellerCondition::Bent;
constexpr auto C = PropellerCondition::Cracked;

// Records whose channel values encode (log, record, channel) so slicing can
// be checked exactly.
FlightLog synthetic_log(int label, std::size_t records, double tag) {
  FlightLog log;
  log.scenario = data::draw_scenario(label, 1);
  for (std::size_t k = 0; k < records; ++k) {
    data::FlightRecord r;
    r.t = 0.05 * static_cast<double>(k);
    const double base = tag * 1e4 + static_cast<double>(k);
    for (std::size_t m = 0; m < 4; ++m) r.omega[m] = base + 0.1 * static_cast<double>(m);
    r.roll = base + 0.4;
    r.pitch = base + 0.5;
    r.yaw = base + 0.6;
    r.roll_rate = base + 0.7;
    r.pitch_rate = base + 0.8;
    r.yaw_rate = base + 0.9;
    log.records.push_back(r);
  }
  return log;
}

data::MissionSetup default_setup() {
  data::MissionSetup setup;
  setup.waypoints = data::waypoint_set("A");
  setup.waypoint_set = "A";
  return setup;
}

const data::ModelBank& analytic_bank() {
  static const data::ModelBank bank = data::ModelBank::analytic(prop::DegradationConfig{});
  return bank;
}

}  // namespace

TEST(Labels, ReferenceRows) {
  EXPECT_EQ(data::scenario_label({N, N, N, N}), 1);
  EXPECT_EQ(data::scenario_label({B, N, N, N}), 2);
  EXPECT_EQ(data::scenario_label({N, N, N, B}), 5);
  EXPECT_EQ(data::scenario_label({N, N, N, C}), 5);
  EXPECT_EQ(data::scenario_label({C, B, N, N}), 6);
  EXPECT_EQ(data::scenario_label({N, N, B, C}), 11);
  EXPECT_EQ(data::scenario_label({B, B, B, N}), 12);
  EXPECT_EQ(data::scenario_label({C, B, B, C}), 16);
}

TEST(Labels, Bijection) {
  std::set<unsigned> masks;
  for (int label = 1; label <= 16; ++label) {
    const unsigned mask = data::mask_from_label(label);
    EXPECT_EQ(data::label_from_mask(mask), label);
    masks.insert(mask);
  }
  EXPECT_EQ(masks.size(), 16u);
  EXPECT_THROW(data::mask_from_label(0), InvalidArgument);
  EXPECT_THROW(data::mask_from_label(17), InvalidArgument);
}

TEST(Scenarios, DrawMatchesLabelAndIsSeeded) {
  for (int label = 1; label <= 16; ++label) {
    const auto s = data::draw_scenario(label, 99);
    EXPECT_EQ(s.label(), label);
    EXPECT_EQ(data::parse_scenario_code(s.code()).conditions, s.conditions);
    EXPECT_EQ(data::draw_scenario(label, 99).conditions, s.conditions);
  }
  std::set<std::string> codes;
  for (std::uint64_t seed = 0; seed < 64; ++seed) codes.insert(data::draw_scenario(16, seed).code());
  EXPECT_GT(codes.size(), 8u);  // both fault types show up on every rotor
}

TEST(Waypoints, FixturesAndParsing) {
  const data::Arena arena;
  for (const char* name : {"A", "B"}) {
    const auto w = data::waypoint_set(name);
    ASSERT_EQ(w.size(), 5u);
    for (const auto& p : w) EXPECT_TRUE(arena.contains(p));
  }
  for (const auto& p : data::random_waypoints(50, arena, 3)) EXPECT_TRUE(arena.contains(p));
  const auto w = data::waypoint_set("B");
  EXPECT_EQ(data::parse_waypoints(data::format_waypoints(w)), w);
  EXPECT_THROW(data::waypoint_set("Z"), InvalidArgument);
  EXPECT_THROW(data::parse_waypoints("1,2"), InvalidArgument);
}

TEST(Mission, NormalFlightRecordsEveryTick) {
  const auto setup = default_setup();
  const auto log = data::run_mission(FaultScenario{}, setup, analytic_bank(), 5);
  ASSERT_FALSE(log.truncated);
  ASSERT_EQ(log.records.size(), 1600u);
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    const auto& r = log.records[k];
    EXPECT_NEAR(r.t, 0.05 * static_cast<double>(k), 1e-9);
    // The waypoint error points at one of the mission waypoints.
    const Eigen::Vector3d target{r.x + r.delta_x, r.y + r.delta_y, r.z + r.delta_z};
    const bool known = std::any_of(setup.waypoints.begin(), setup.waypoints.end(),
                                   [&](const Eigen::Vector3d& w) { return (w - target).norm() < 1e-9; });
    EXPECT_TRUE(known) << "record " << k;
    for (std::size_t m = 0; m < 4; ++m) {
      EXPECT_GE(r.esc[m], 1000.0);
      EXPECT_LE(r.esc[m], 2000.0);
    }
  }
  for (std::size_t v : log.waypoint_visits) EXPECT_GE(v, 1u);
}

TEST(Mission, SameInputsGiveIdenticalLogs) {
  const auto setup = default_setup();
  const FaultScenario s = data::draw_scenario(9, 4);
  EXPECT_TRUE(data::run_mission(s, setup, analytic_bank(), 8) == data::run_mission(s, setup, analytic_bank(), 8));
}

TEST(Mission, ControllerCompensatesWeakRotorFour) {
  auto setup = default_setup();
  setup.waypoints = {Eigen::Vector3d{0.0, 0.0, 2.0}};
  setup.mission.duration = 20.0;
  const auto log = data::run_mission(data::parse_scenario_code("NNNB"), setup, analytic_bank(), 5);
  std::array<double, 4> sum{};
  std::size_t steady = 0;
  for (const auto& r : log.records) {
    if (std::hypot(r.vx, r.vy, r.vz) > 0.5) continue;
    ++steady;
    for (std::size_t m = 0; m < 4; ++m) sum[m] += r.omega[m];
  }
  ASSERT_GT(steady, 100u);
  for (std::size_t m = 0; m < 3; ++m) EXPECT_GT(sum[3], sum[m]);
}

TEST(Mission, LoggedForcesFollowTheRotorModel) {
  // Normal analytic rotors and no unbalance: f_i / tau_i is k_f / k_tau.
  const auto log = data::run_mission(FaultScenario{}, default_setup(), analytic_bank(), 5);
  const sim::QuadParams p;
  for (const auto& r : log.records) {
    for (std::size_t m = 0; m < 4; ++m) EXPECT_NEAR(r.tau[m] * p.k_f / p.k_tau, r.f[m], 1e-12);
  }
}

TEST(FlightLogFile, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "propfault_test_logs";
  std::filesystem::create_directories(dir);
  auto setup = default_setup();
  setup.mission.duration = 5.0;
  auto log = data::run_mission(data::draw_scenario(13, 2), setup, analytic_bank(), 2);
  log.params_hash = "abc";
  data::write_flight_log(log, dir / "log.csv");
  EXPECT_TRUE(std::filesystem::exists(data::meta_path(dir / "log.csv")));
  const auto back = data::read_flight_log(dir / "log.csv");
  EXPECT_TRUE(back == log);
  EXPECT_THROW(data::read_flight_log(dir / "absent.csv"), IoError);
}

TEST(Windows, CountsPerLog) {
  const std::vector<FlightLog> logs{synthetic_log(3, 1600, 0)};
  EXPECT_EQ(data::window_dataset(logs, 100, 1).windows().size(), 1501u);
  EXPECT_EQ(data::window_dataset(logs, 100, 100).windows().size(), 16u);
}

TEST(Windows, SlicingIdentity) {
  const std::vector<FlightLog> logs{synthetic_log(3, 300, 0), synthetic_log(7, 250, 1)};
  const auto ds = data::window_dataset(logs, 100, 1);
  ASSERT_EQ(ds.windows().size(), 201u + 151u);
  data::Normalization identity;
  std::vector<double> out(100 * data::kChannels);
  for (const auto& ref : {data::WindowRef{0, 17, 3}, data::WindowRef{1, 150, 7}}) {
    ds.materialize(ref, identity, out.data());
    for (std::size_t t = 0; t < 100; ++t) {
      EXPECT_EQ(out[t * data::kChannels], logs[ref.log].records[ref.offset + t].omega[0]);
      EXPECT_EQ(out[t * data::kChannels + 9], logs[ref.log].records[ref.offset + t].yaw_rate);
    }
  }
  EXPECT_EQ(ds.windows().back().label, 7);
}

TEST(Windows, ShortLogsAreSkipped) {
  const std::vector<FlightLog> logs{synthetic_log(2, 80, 0), synthetic_log(4, 120, 1)};
  const auto ds = data::window_dataset(logs, 100, 1);
  EXPECT_EQ(ds.windows().size(), 21u);
  EXPECT_EQ(ds.warnings().size(), 1u);
}

TEST(Split, WindowModePartition) {
  const std::vector<FlightLog> logs{synthetic_log(1, 1099, 0)};
  const auto ds = data::window_dataset(logs, 100, 1);
  ASSERT_EQ(ds.windows().size(), 1000u);
  const auto split = data::split_dataset(ds, 0.8, data::SplitMode::Window, 21);
  EXPECT_EQ(split.train.size(), 800u);
  EXPECT_EQ(split.test.size(), 200u);
  std::set<std::uint32_t> offsets;
  for (const auto& r : split.train) offsets.insert(r.offset);
  for (const auto& r : split.test) offsets.insert(r.offset);
  EXPECT_EQ(offsets.size(), 1000u);
  const auto again = data::split_dataset(ds, 0.8, data::SplitMode::Window, 21);
  EXPECT_EQ(again.train, split.train);
  EXPECT_EQ(again.test, split.test);
}

TEST(Split, SegmentModeSharesNoRecords) {
  std::vector<FlightLog> logs;
  for (int label = 1; label <= 4; ++label) logs.push_back(synthetic_log(label, 1600, label));
  const auto ds = data::window_dataset(logs, 100, 1);
  const auto split = data::split_dataset(ds, 0.8, data::SplitMode::Segment, 5);
  ASSERT_FALSE(split.train.empty());
  ASSERT_FALSE(split.test.empty());
  std::vector<std::vector<int>> owner(logs.size(), std::vector<int>(1600, 0));
  for (const auto& r : split.train) {
    for (std::size_t k = r.offset; k < r.offset + 100; ++k) owner[r.log][k] |= 1;
  }
  for (const auto& r : split.test) {
    for (std::size_t k = r.offset; k < r.offset + 100; ++k) owner[r.log][k] |= 2;
  }
  for (const auto& log : owner) {
    for (int o : log) EXPECT_NE(o, 3);
  }
  EXPECT_EQ(data::split_dataset(ds, 0.8, data::SplitMode::Segment, 5).test, split.test);
}

TEST(Normalization, PopulationStatistics) {
  const std::vector<FlightLog> logs{synthetic_log(1, 200, 0)};
  const auto ds = data::window_dataset(logs, 100, 100);
  const auto norm = data::compute_normalization(ds, ds.windows());
  // Records 0..199 of channel 0 hold 0..199.
  EXPECT_NEAR(norm.mean[0], 99.5, 1e-12);
  EXPECT_NEAR(norm.stddev[0], std::sqrt((200.0 * 200.0 - 1.0) / 12.0), 1e-9);
}

TEST(Manifest, RoundTrip) {
  data::DatasetManifest m;
  m.log_files = {"logs/a.csv", "logs/b.csv"};
  m.log_labels = {1, 16};
  m.log_records = {1600, 1200};
  m.log_truncated = {false, true};
  m.split_mode = data::SplitMode::Segment;
  m.split_seed = 123456789012345ULL;
  m.train_count = 10;
  m.test_count = 3;
  m.normalization.mean[4] = 0.1 + 0.2;
  m.normalization.stddev[9] = 1.0 / 3.0;
  m.params_hash = "0123456789abcdef";
  const auto path = std::filesystem::temp_directory_path() / "propfault_test_manifest.txt";
  data::write_manifest(m, path);
  EXPECT_TRUE(data::read_manifest(path) == m);
}
