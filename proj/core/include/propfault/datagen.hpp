#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "propfault/calibration.hpp"
#include "propfault/controller.hpp"
#include "propfault/propeller.hpp"
#include "propfault/simcore.hpp"

namespace propfault::data {

using prop::PropellerCondition;
using Conditions = std::array<PropellerCondition, 4>;

inline constexpr int kLabelCount = 16;

// Fault bitmask (bit i set = propeller i+1 faulty) <-> label 1..16.
// Label order: none; singles 1..4; pairs (1,2) (1,3) (1,4) (2,3) (2,4) (3,4);
// triples (1,2,3) (1,2,4) (1,3,4) (2,3,4); all four.
int label_from_mask(unsigned mask);
unsigned mask_from_label(int label);

int scenario_label(const Conditions& conditions);

struct FaultScenario {
  Conditions conditions{PropellerCondition::Normal, PropellerCondition::Normal, PropellerCondition::Normal,
                        PropellerCondition::Normal};
  int label() const { return scenario_label(conditions); }
  std::string code() const;  // e.g. "NNBC"
  friend bool operator==(const FaultScenario&, const FaultScenario&) = default;
};

// Each faulty propeller of the label draws Bent or Cracked with p = 0.5.
FaultScenario draw_scenario(int label, std::uint64_t seed);
FaultScenario parse_scenario_code(const std::string& code);

// ---------------------------------------------------------------------------
// Waypoints.

struct Arena {
  Eigen::Vector3d lo{-10.0, -10.0, 2.0};
  Eigen::Vector3d hi{10.0, 10.0, 10.0};
  bool contains(const Eigen::Vector3d& p) const;
};

using Waypoints = std::vector<Eigen::Vector3d>;

// Named fixtures "A" and "B", five waypoints each.
Waypoints waypoint_set(const std::string& name);
Waypoints random_waypoints(std::size_t count, const Arena& arena, std::uint64_t seed);
// "x,y,z;x,y,z;..."
Waypoints parse_waypoints(const std::string& text);
std::string format_waypoints(const Waypoints& waypoints);

// ---------------------------------------------------------------------------
// Mission simulation.

// Propeller models by condition; each slot may be shared by several rotors.
struct ModelBank {
  std::shared_ptr<const prop::PropellerModel> normal;
  std::shared_ptr<const prop::PropellerModel> bent;
  std::shared_ptr<const prop::PropellerModel> cracked;

  const prop::PropellerModel& get(PropellerCondition condition) const;
  static ModelBank analytic(const prop::DegradationConfig& cfg);
};

struct MissionConfig {
  double duration = 80.0;        // s
  double physics_dt = 0.001;     // s
  double control_dt = 0.01;      // s
  double record_period = 0.05;   // s
  double acceptance_radius = 0.5;  // m
  Eigen::Vector3d start{0.0, 0.0, 2.0};
  Arena arena{};
  calib::FactorMode factor_mode = calib::FactorMode::Corrected;

  void validate() const;
  std::size_t substeps() const;
  std::size_t ticks_per_record() const;
  std::size_t tick_count() const;
};

// One recorded tick. omega is the controller's target RPM; f and tau are the
// per-rotor values applied to the dynamics at that tick.
struct FlightRecord {
  double t = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;
  double vx = 0.0, vy = 0.0, vz = 0.0;
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  double roll_rate = 0.0, pitch_rate = 0.0, yaw_rate = 0.0;
  std::array<double, 4> omega{};
  std::array<double, 4> f{};
  std::array<double, 4> tau{};
  double delta_x = 0.0, delta_y = 0.0, delta_z = 0.0;
  std::array<double, 4> esc{};

  friend bool operator==(const FlightRecord&, const FlightRecord&) = default;
};

struct FlightLog {
  FaultScenario scenario;
  std::uint64_t seed = 0;
  std::string params_hash;
  std::string waypoint_set;
  double period = 0.05;
  bool truncated = false;
  std::string truncation_reason;
  std::vector<std::size_t> waypoint_visits;  // entries per waypoint
  std::vector<FlightRecord> records;

  int label() const { return scenario.label(); }
  friend bool operator==(const FlightLog&, const FlightLog&) = default;
};

// Hash over every constant that shapes a mission.
std::string mission_params_hash(const sim::QuadParams& params, const ctrl::ControllerGains& gains,
                                const calib::UnbalanceProfile& profile, const MissionConfig& mission,
                                const Waypoints& waypoints);

struct MissionSetup {
  sim::QuadParams params{};
  ctrl::ControllerGains gains{};
  calib::UnbalanceProfile profile{};
  MissionConfig mission{};
  Waypoints waypoints;
  std::string waypoint_set = "custom";
};

// Closed-loop flight that cycles the waypoints until the timer ends. A
// simulation fault ends the log early with truncated = true.
FlightLog run_mission(const FaultScenario& scenario, const MissionSetup& setup, const ModelBank& models,
                      std::uint64_t seed);

// Hover samples (target RPM and speed norm) for calibration.
std::vector<calib::HoverSample> hover_samples(const FlightLog& log);

// CSV plus a key=value companion written next to it with extension .meta.
void write_flight_log(const FlightLog& log, const std::filesystem::path& csv_path);
FlightLog read_flight_log(const std::filesystem::path& csv_path);
std::filesystem::path meta_path(const std::filesystem::path& csv_path);
const std::vector<std::string>& flight_log_columns();

// ---------------------------------------------------------------------------
// Windowed classifier dataset.

inline constexpr std::size_t kChannels = 10;
inline constexpr std::size_t kWindow = 100;
const std::array<std::string, kChannels>& channel_names();

struct WindowRef {
  std::uint32_t log = 0;
  std::uint32_t offset = 0;
  int label = 0;
  friend bool operator==(const WindowRef&, const WindowRef&) = default;
};

struct Normalization {
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> stddev{1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

// Channel series of every log plus window references into them.
class WindowDataset {
 public:
  std::size_t window() const { return window_; }
  std::size_t hop() const { return hop_; }
  std::size_t log_count() const { return series_.size(); }
  std::size_t records(std::size_t log) const { return series_[log].size() / kChannels; }
  int log_label(std::size_t log) const { return labels_[log]; }
  const std::vector<WindowRef>& windows() const { return windows_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Raw channel value of a record.
  double value(std::size_t log, std::size_t record, std::size_t channel) const {
    return series_[log][record * kChannels + channel];
  }
  // Writes window x channel values (time-major), z-scored with norm.
  void materialize(const WindowRef& ref, const Normalization& norm, double* out) const;

  friend WindowDataset window_dataset(std::span<const FlightLog> logs, std::size_t window, std::size_t hop);

 private:
  std::size_t window_ = kWindow;
  std::size_t hop_ = 1;
  std::vector<std::vector<double>> series_;
  std::vector<int> labels_;
  std::vector<WindowRef> windows_;
  std::vector<std::string> warnings_;
};

// Windows start at offsets 0, hop, 2 hop, ... and inherit the log label. Logs
// shorter than the window are skipped and reported in warnings().
WindowDataset window_dataset(std::span<const FlightLog> logs, std::size_t window = kWindow, std::size_t hop = 1);

enum class SplitMode { Window, Segment };
SplitMode parse_split_mode(const std::string& name);
std::string to_string(SplitMode mode);

struct Split {
  std::vector<WindowRef> train;
  std::vector<WindowRef> test;
};

// Window: seeded shuffle of all windows, first ratio to train.
// Segment: per log, a seeded contiguous block of (1 - ratio) of the records is
// held out and each side is windowed on its own, so no record is shared.
Split split_dataset(const WindowDataset& dataset, double ratio, SplitMode mode, std::uint64_t seed);

// Per-channel mean and population std-dev over the records covered by refs.
Normalization compute_normalization(const WindowDataset& dataset, std::span<const WindowRef> refs);

// Everything needed to rebuild a split: member logs, split settings,
// normalization. Written as key=value lines.
struct DatasetManifest {
  std::vector<std::string> log_files;  // relative to the manifest directory
  std::vector<int> log_labels;
  std::vector<std::size_t> log_records;
  std::vector<bool> log_truncated;
  std::size_t window = kWindow;
  std::size_t hop = 1;
  SplitMode split_mode = SplitMode::Window;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  Normalization normalization;
  std::string params_hash;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Loaded logs and the windowed dataset behind a manifest.
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<FlightLog> logs;
  WindowDataset windows;
  Split split;
};

// Reads every listed log, windows them and rebuilds the split; throws when
// the rebuilt counts disagree with the manifest.
LoadedDataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace propfault::data
