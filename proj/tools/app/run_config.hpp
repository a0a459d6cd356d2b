#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "propfault/calibration.hpp"
#include "propfault/classifier.hpp"
#include "propfault/controller.hpp"
#include "propfault/datagen.hpp"
#include "propfault/propeller.hpp"
#include "propfault/simcore.hpp"

namespace propfault::app {

// Which rotor models drive the simulated flights.
enum class ModelSource { Learned, Analytic };

// Windows an evaluation scores: the held-out split, or every window of a
// dataset the model never trained on.
enum class EvalSubset { Test, All };

// Everything a run needs. Any key left out of the INI file keeps the
// default below.
struct RunConfig {
  std::uint64_t seed = 42;

  sim::QuadParams airframe{};
  double payload_factor = 1.0;  // multiplies airframe.mass

  prop::DegradationConfig degradation{};
  ctrl::ControllerGains controller{};
  calib::UnbalanceProfile unbalance{};
  data::MissionConfig mission{};
  std::string waypoints = "A";  // "A", "B", "random:<n>" or "x,y,z;x,y,z;..."
  std::vector<int> labels;      // empty means all 16
  std::size_t missions_per_label = 1;
  ModelSource models = ModelSource::Learned;

  prop::RegressorConfig regressor{};

  std::size_t window = data::kWindow;
  std::size_t hop = 1;
  data::SplitMode split_mode = data::SplitMode::Window;
  double split_ratio = 0.8;

  clf::CnnConfig cnn{};
  clf::TrainConfig classifier{};
  bool shuffle_labels = false;  // null-control training

  EvalSubset eval_subset = EvalSubset::Test;
  std::string eval_name;  // report stem; defaults to "eval_<dataset dir>"

  // Relative to the output directory.
  std::string loadcell_dir = "loadcell";
  std::string models_dir = "models";
  std::string dataset_dir = "dataset";
  std::string classifier_dir = "classifier";
  std::string reports_dir = "reports";

  // Airframe as flown: nominal parameters with the payload applied.
  sim::QuadParams flown_airframe() const;
  data::Waypoints resolved_waypoints() const;
  // Short name recorded in flight logs: "A", "B", "random" or "custom".
  std::string waypoint_set_name() const;
  std::vector<int> resolved_labels() const;
  std::string report_stem() const;
  // Cross-field checks; throws ConfigError.
  void validate() const;
};

// Reads an INI file over the defaults. Unknown sections or keys and
// malformed values throw ConfigError naming the offending key.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text, const std::string& origin = "<string>");

// Complete INI rendering that parses back to the same configuration.
std::string render_run_config(const RunConfig& config);

// Independent seed for a named stage.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

}  // namespace propfault::app
