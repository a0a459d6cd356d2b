#include "app/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <utility>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "propfault/error.hpp"
#include "propfault/hash.hpp"
#include "propfault/nn/checkpoint.hpp"

namespace propfault::app {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) parts.push_back(trim(item));
  return parts;
}

template <class T>
T parse_integer(const std::string& text) {
  const std::string t = trim(text);
  T value{};
  auto res = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw InvalidArgument("not a non-negative integer: '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw InvalidArgument("not a boolean: '" + text + "'");
}

template <class Seq>
std::string join(const Seq& values, const std::function<std::string(typename Seq::value_type)>& fmt) {
  std::string out;
  for (const auto& v : values) out += (out.empty() ? "" : ",") + fmt(v);
  return out;
}

template <std::size_t N>
std::array<double, N> parse_array(const std::string& text) {
  const auto parts = split(text, ',');
  if (parts.size() != N) throw InvalidArgument("expected " + std::to_string(N) + " comma-separated numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = nn::parse_double(parts[i]);
  return out;
}

// One INI key bound to a RunConfig field.
struct Entry {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Access>
Entry real(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](RunConfig& c, const std::string& v) { access(c) = nn::parse_double(v); },
          [access](const RunConfig& c) { return nn::format_double(access(c)); }};
}

template <class Access>
Entry count(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](RunConfig& c, const std::string& v) { access(c) = parse_integer<std::size_t>(v); },
          [access](const RunConfig& c) { return std::to_string(access(c)); }};
}

template <class Access>
Entry flag(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](RunConfig& c, const std::string& v) { access(c) = parse_bool(v); },
          [access](const RunConfig& c) { return std::string(access(c) ? "true" : "false"); }};
}

template <class Access>
Entry text(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key), [access](RunConfig& c, const std::string& v) { access(c) = trim(v); },
          [access](const RunConfig& c) { return access(c); }};
}

template <std::size_t N, class Access>
Entry numbers(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](RunConfig& c, const std::string& v) { access(c) = parse_array<N>(v); },
          [access](const RunConfig& c) {
            return join(access(c), std::function<std::string(double)>(nn::format_double));
          }};
}

std::string format_model_source(ModelSource s) { return s == ModelSource::Learned ? "learned" : "analytic"; }

ModelSource parse_model_source(const std::string& v) {
  if (v == "learned") return ModelSource::Learned;
  if (v == "analytic") return ModelSource::Analytic;
  throw InvalidArgument("expected 'learned' or 'analytic'");
}

std::string format_subset(EvalSubset s) { return s == EvalSubset::Test ? "test" : "all"; }

EvalSubset parse_subset(const std::string& v) {
  if (v == "test") return EvalSubset::Test;
  if (v == "all") return EvalSubset::All;
  throw InvalidArgument("expected 'test' or 'all'");
}

// Optimizer settings share one layout in both training sections.
void add_optimizer(std::vector<Entry>& table, const std::string& section,
                   nn::OptimizerConfig& (*pick)(RunConfig&)) {
  auto cpick = [pick](const RunConfig& c) -> const nn::OptimizerConfig& { return pick(const_cast<RunConfig&>(c)); };
  table.push_back({section, "optimizer",
                   [pick](RunConfig& c, const std::string& v) { pick(c).kind = nn::parse_optimizer_kind(trim(v)); },
                   [cpick](const RunConfig& c) { return nn::to_string(cpick(c).kind); }});
  table.push_back({section, "learning_rate",
                   [pick](RunConfig& c, const std::string& v) { pick(c).learning_rate = nn::parse_double(v); },
                   [cpick](const RunConfig& c) { return nn::format_double(cpick(c).learning_rate); }});
  table.push_back({section, "momentum",
                   [pick](RunConfig& c, const std::string& v) { pick(c).momentum = nn::parse_double(v); },
                   [cpick](const RunConfig& c) { return nn::format_double(cpick(c).momentum); }});
}

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> t;
    t.push_back({"run", "seed", [](RunConfig& c, const std::string& v) { c.seed = parse_integer<std::uint64_t>(v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});

    t.push_back(real("airframe", "mass", [](auto& c) -> auto& { return c.airframe.mass; }));
    t.push_back(real("airframe", "arm_length", [](auto& c) -> auto& { return c.airframe.arm_length; }));
    t.push_back(real("airframe", "ixx", [](auto& c) -> auto& { return c.airframe.ixx; }));
    t.push_back(real("airframe", "iyy", [](auto& c) -> auto& { return c.airframe.iyy; }));
    t.push_back(real("airframe", "izz", [](auto& c) -> auto& { return c.airframe.izz; }));
    t.push_back(real("airframe", "k_f", [](auto& c) -> auto& { return c.airframe.k_f; }));
    t.push_back(real("airframe", "k_tau", [](auto& c) -> auto& { return c.airframe.k_tau; }));
    t.push_back(real("airframe", "gravity", [](auto& c) -> auto& { return c.airframe.gravity; }));
    t.push_back(real("airframe", "k_drag", [](auto& c) -> auto& { return c.airframe.k_drag; }));
    t.push_back(real("airframe", "payload_factor", [](auto& c) -> auto& { return c.payload_factor; }));

    t.push_back(real("degradation", "omega_max", [](auto& c) -> auto& { return c.degradation.omega_max; }));
    t.push_back(real("degradation", "bent_thrust_loss", [](auto& c) -> auto& { return c.degradation.bent_thrust_loss; }));
    t.push_back(real("degradation", "bent_torque_loss", [](auto& c) -> auto& { return c.degradation.bent_torque_loss; }));
    t.push_back(
        real("degradation", "cracked_thrust_loss", [](auto& c) -> auto& { return c.degradation.cracked_thrust_loss; }));
    t.push_back(
        real("degradation", "cracked_torque_loss", [](auto& c) -> auto& { return c.degradation.cracked_torque_loss; }));
    t.push_back(real("degradation", "thrust_noise", [](auto& c) -> auto& { return c.degradation.thrust_noise; }));
    t.push_back(real("degradation", "torque_noise", [](auto& c) -> auto& { return c.degradation.torque_noise; }));
    t.push_back(real("degradation", "duration", [](auto& c) -> auto& { return c.degradation.duration; }));
    t.push_back(real("degradation", "period", [](auto& c) -> auto& { return c.degradation.period; }));
    t.push_back(real("degradation", "ramp_period", [](auto& c) -> auto& { return c.degradation.ramp_period; }));

    t.push_back(numbers<3>("controller", "kp_pos", [](auto& c) -> auto& { return c.controller.kp_pos; }));
    t.push_back(numbers<3>("controller", "kd_pos", [](auto& c) -> auto& { return c.controller.kd_pos; }));
    t.push_back(numbers<3>("controller", "kp_att", [](auto& c) -> auto& { return c.controller.kp_att; }));
    t.push_back(numbers<3>("controller", "kd_att", [](auto& c) -> auto& { return c.controller.kd_att; }));
    t.push_back(
        real("controller", "max_position_error", [](auto& c) -> auto& { return c.controller.max_position_error; }));
    t.push_back(real("controller", "max_tilt", [](auto& c) -> auto& { return c.controller.max_tilt; }));
    t.push_back(real("controller", "rpm_min", [](auto& c) -> auto& { return c.controller.rpm_min; }));
    t.push_back(real("controller", "rpm_max", [](auto& c) -> auto& { return c.controller.rpm_max; }));
    t.push_back(real("controller", "motor_tau", [](auto& c) -> auto& { return c.controller.motor_tau; }));

    t.push_back(numbers<4>("unbalance", "ratio", [](auto& c) -> auto& { return c.unbalance.ratio; }));
    t.push_back(real("unbalance", "omega_max", [](auto& c) -> auto& { return c.unbalance.omega_max; }));
    t.push_back({"unbalance", "factor_mode",
                 [](RunConfig& c, const std::string& v) { c.mission.factor_mode = calib::parse_factor_mode(trim(v)); },
                 [](const RunConfig& c) { return calib::to_string(c.mission.factor_mode); }});

    t.push_back(real("mission", "duration", [](auto& c) -> auto& { return c.mission.duration; }));
    t.push_back(real("mission", "physics_dt", [](auto& c) -> auto& { return c.mission.physics_dt; }));
    t.push_back(real("mission", "control_dt", [](auto& c) -> auto& { return c.mission.control_dt; }));
    t.push_back(real("mission", "record_period", [](auto& c) -> auto& { return c.mission.record_period; }));
    t.push_back(real("mission", "acceptance_radius", [](auto& c) -> auto& { return c.mission.acceptance_radius; }));
    t.push_back({"mission", "start",
                 [](RunConfig& c, const std::string& v) {
                   const auto a = parse_array<3>(v);
                   c.mission.start = Eigen::Vector3d(a[0], a[1], a[2]);
                 },
                 [](const RunConfig& c) {
                   const auto& s = c.mission.start;
                   return nn::format_double(s.x()) + "," + nn::format_double(s.y()) + "," + nn::format_double(s.z());
                 }});
    t.push_back(text("mission", "waypoints", [](auto& c) -> auto& { return c.waypoints; }));
    t.push_back({"mission", "labels",
                 [](RunConfig& c, const std::string& v) {
                   c.labels.clear();
                   if (trim(v) == "all") return;
                   for (const auto& part : split(v, ',')) c.labels.push_back(static_cast<int>(parse_integer<unsigned>(part)));
                 },
                 [](const RunConfig& c) {
                   if (c.labels.empty()) return std::string("all");
                   return join(c.labels, std::function<std::string(int)>([](int l) { return std::to_string(l); }));
                 }});
    t.push_back(count("mission", "missions_per_label", [](auto& c) -> auto& { return c.missions_per_label; }));
    t.push_back({"mission", "propeller_models",
                 [](RunConfig& c, const std::string& v) { c.models = parse_model_source(trim(v)); },
                 [](const RunConfig& c) { return format_model_source(c.models); }});

    t.push_back(count("regressor", "window", [](auto& c) -> auto& { return c.regressor.window; }));
    t.push_back(count("regressor", "lstm1_units", [](auto& c) -> auto& { return c.regressor.lstm1_units; }));
    t.push_back(count("regressor", "lstm2_units", [](auto& c) -> auto& { return c.regressor.lstm2_units; }));
    t.push_back(count("regressor", "dense_units", [](auto& c) -> auto& { return c.regressor.dense_units; }));
    t.push_back(count("regressor", "batch_size", [](auto& c) -> auto& { return c.regressor.batch_size; }));
    add_optimizer(t, "regressor", [](RunConfig& c) -> nn::OptimizerConfig& { return c.regressor.optimizer; });
    t.push_back(count("regressor", "max_epochs", [](auto& c) -> auto& { return c.regressor.max_epochs; }));
    t.push_back(count("regressor", "patience", [](auto& c) -> auto& { return c.regressor.patience; }));
    t.push_back(real("regressor", "min_delta", [](auto& c) -> auto& { return c.regressor.min_delta; }));
    t.push_back(real("regressor", "train_fraction", [](auto& c) -> auto& { return c.regressor.train_fraction; }));
    t.push_back(
        real("regressor", "validation_fraction", [](auto& c) -> auto& { return c.regressor.validation_fraction; }));

    t.push_back(count("dataset", "window", [](auto& c) -> auto& { return c.window; }));
    t.push_back(count("dataset", "hop", [](auto& c) -> auto& { return c.hop; }));
    t.push_back({"dataset", "split_mode",
                 [](RunConfig& c, const std::string& v) { c.split_mode = data::parse_split_mode(trim(v)); },
                 [](const RunConfig& c) { return data::to_string(c.split_mode); }});
    t.push_back(real("dataset", "split_ratio", [](auto& c) -> auto& { return c.split_ratio; }));

    t.push_back({"classifier", "conv_channels",
                 [](RunConfig& c, const std::string& v) {
                   c.cnn.conv_channels.clear();
                   for (const auto& part : split(v, ',')) c.cnn.conv_channels.push_back(parse_integer<std::size_t>(part));
                 },
                 [](const RunConfig& c) {
                   return join(c.cnn.conv_channels,
                               std::function<std::string(std::size_t)>([](std::size_t n) { return std::to_string(n); }));
                 }});
    t.push_back(count("classifier", "dense_units", [](auto& c) -> auto& { return c.cnn.dense_units; }));
    t.push_back(count("classifier", "batch_size", [](auto& c) -> auto& { return c.classifier.batch_size; }));
    add_optimizer(t, "classifier", [](RunConfig& c) -> nn::OptimizerConfig& { return c.classifier.optimizer; });
    t.push_back(count("classifier", "max_epochs", [](auto& c) -> auto& { return c.classifier.max_epochs; }));
    t.push_back(count("classifier", "patience", [](auto& c) -> auto& { return c.classifier.patience; }));
    t.push_back(
        real("classifier", "validation_fraction", [](auto& c) -> auto& { return c.classifier.validation_fraction; }));
    t.push_back(flag("classifier", "shuffle_labels", [](auto& c) -> auto& { return c.shuffle_labels; }));

    t.push_back({"evaluation", "subset", [](RunConfig& c, const std::string& v) { c.eval_subset = parse_subset(trim(v)); },
                 [](const RunConfig& c) { return format_subset(c.eval_subset); }});
    t.push_back(text("evaluation", "name", [](auto& c) -> auto& { return c.eval_name; }));

    t.push_back(text("paths", "loadcell_dir", [](auto& c) -> auto& { return c.loadcell_dir; }));
    t.push_back(text("paths", "models_dir", [](auto& c) -> auto& { return c.models_dir; }));
    t.push_back(text("paths", "dataset_dir", [](auto& c) -> auto& { return c.dataset_dir; }));
    t.push_back(text("paths", "classifier_dir", [](auto& c) -> auto& { return c.classifier_dir; }));
    t.push_back(text("paths", "reports_dir", [](auto& c) -> auto& { return c.reports_dir; }));
    return t;
  }();
  return entries;
}

}  // namespace

sim::QuadParams RunConfig::flown_airframe() const {
  sim::QuadParams p = airframe;
  p.mass *= payload_factor;
  return p;
}

data::Waypoints RunConfig::resolved_waypoints() const {
  if (waypoints == "A" || waypoints == "B") return data::waypoint_set(waypoints);
  if (waypoints.rfind("random:", 0) == 0) {
    const auto n = parse_integer<std::size_t>(waypoints.substr(7));
    return data::random_waypoints(n, mission.arena, derive_seed(seed, "waypoints"));
  }
  return data::parse_waypoints(waypoints);
}

std::string RunConfig::waypoint_set_name() const {
  if (waypoints == "A" || waypoints == "B") return waypoints;
  if (waypoints.rfind("random:", 0) == 0) return "random";
  return "custom";
}

std::vector<int> RunConfig::resolved_labels() const {
  if (!labels.empty()) return labels;
  std::vector<int> all(data::kLabelCount);
  for (int i = 0; i < data::kLabelCount; ++i) all[static_cast<std::size_t>(i)] = i + 1;
  return all;
}

std::string RunConfig::report_stem() const {
  if (!eval_name.empty()) return eval_name;
  return "eval_" + std::filesystem::path(dataset_dir).filename().string();
}

void RunConfig::validate() const {
  try {
    airframe.validate();
    if (!(payload_factor > 0.0)) throw InvalidArgument("airframe.payload_factor must be positive");
    flown_airframe().validate();
    degradation.validate();
    controller.validate();
    unbalance.validate();
    mission.validate();
    if (resolved_waypoints().empty()) throw InvalidArgument("mission.waypoints is empty");
    for (int l : labels) {
      if (l < 1 || l > data::kLabelCount) throw InvalidArgument("mission.labels must lie in 1..16");
    }
    if (missions_per_label == 0) throw InvalidArgument("mission.missions_per_label must be at least 1");
    regressor.validate();
    if (window == 0 || hop == 0) throw InvalidArgument("dataset.window and dataset.hop must be positive");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw InvalidArgument("dataset.split_ratio must lie in (0, 1)");
    clf::CnnConfig shaped = cnn;
    shaped.height = window;
    shaped.validate();
    classifier.validate();
    for (const std::string* dir : {&loadcell_dir, &models_dir, &dataset_dir, &classifier_dir, &reports_dir}) {
      if (dir->empty()) throw InvalidArgument("paths entries must not be empty");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  RunConfig config;
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) {
      throw ConfigError(origin + ": key '" + section + "' must sit inside a [section]");
    }
    for (const auto& [key, value] : keys) {
      const auto& entries = table();
      const auto it = std::find_if(entries.begin(), entries.end(),
                                   [&](const Entry& e) { return e.section == section && e.key == key; });
      if (it == entries.end()) throw ConfigError(origin + ": unknown key [" + section + "] " + key);
      try {
        it->set(config, value.data());
      } catch (const Error& e) {
        throw ConfigError(origin + ": [" + section + "] " + key + ": " + e.what());
      }
    }
  }
  config.degradation.k_f = config.airframe.k_f;
  config.degradation.k_tau = config.airframe.k_tau;
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.string());
}

std::string render_run_config(const RunConfig& config) {
  std::string out;
  std::string current;
  for (const Entry& e : table()) {
    if (e.section != current) {
      out += (current.empty() ? "[" : "\n[") + e.section + "]\n";
      current = e.section;
    }
    out += e.key + " = " + e.get(config) + "\n";
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  return fnv1a64(tag, fnv1a64(std::to_string(seed)));
}

}  // namespace propfault::app
