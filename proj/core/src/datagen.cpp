#include "propfault/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "propfault/error.hpp"
#include "propfault/hash.hpp"
#include "propfault/nn/checkpoint.hpp"

namespace propfault::data {

using nn::format_double;
using nn::parse_double;

// ---------------------------------------------------------------- labels

namespace {

// Fault masks in label order; bit i is propeller i+1.
constexpr std::array<unsigned, kLabelCount> kLabelMasks{
    0b0000,                          // 1
    0b0001, 0b0010, 0b0100, 0b1000,  // 2..5
    0b0011, 0b0101, 0b1001, 0b0110, 0b1010, 0b1100,  // 6..11
    0b0111, 0b1011, 0b1101, 0b1110,  // 12..15
    0b1111,                          // 16
};

}  // namespace

int label_from_mask(unsigned mask) {
  for (int i = 0; i < kLabelCount; ++i) {
    if (kLabelMasks[static_cast<std::size_t>(i)] == mask) return i + 1;
  }
  throw InvalidArgument("fault mask " + std::to_string(mask) + " outside 0..15");
}

unsigned mask_from_label(int label) {
  if (label < 1 || label > kLabelCount) throw InvalidArgument("label " + std::to_string(label) + " outside 1..16");
  return kLabelMasks[static_cast<std::size_t>(label - 1)];
}

int scenario_label(const Conditions& conditions) {
  unsigned mask = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (conditions[i] != PropellerCondition::Normal) mask |= 1u << i;
  }
  return label_from_mask(mask);
}

std::string FaultScenario::code() const {
  std::string out;
  for (PropellerCondition c : conditions) out.push_back(prop::condition_code(c));
  return out;
}

FaultScenario draw_scenario(int label, std::uint64_t seed) {
  const unsigned mask = mask_from_label(label);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution cracked(0.5);
  FaultScenario s;
  for (std::size_t i = 0; i < 4; ++i) {
    const bool is_cracked = cracked(rng);
    if (mask & (1u << i)) s.conditions[i] = is_cracked ? PropellerCondition::Cracked : PropellerCondition::Bent;
  }
  return s;
}

FaultScenario parse_scenario_code(const std::string& code) {
  if (code.size() != 4) throw InvalidArgument("scenario code must have four letters, got '" + code + "'");
  FaultScenario s;
  for (std::size_t i = 0; i < 4; ++i) s.conditions[i] = prop::parse_condition(std::string(1, code[i]));
  return s;
}

// ---------------------------------------------------------------- waypoints

bool Arena::contains(const Eigen::Vector3d& p) const {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

Waypoints waypoint_set(const std::string& name) {
  if (name == "A") {
    return {{5, 5, 5}, {-5, 6, 8}, {-6, -5, 4}, {6, -6, 7}, {0, 0, 3}};
  }
  if (name == "B") {
    return {{-8, 2, 6}, {3, 8, 3}, {8, -2, 9}, {-2, -8, 5}, {2, 1, 7}};
  }
  throw InvalidArgument("unknown waypoint set '" + name + "' (expected A or B)");
}

Waypoints random_waypoints(std::size_t count, const Arena& arena, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Waypoints out;
  for (std::size_t k = 0; k < count; ++k) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a) p[a] = std::uniform_real_distribution<double>(arena.lo[a], arena.hi[a])(rng);
    out.push_back(p);
  }
  return out;
}

Waypoints parse_waypoints(const std::string& text) {
  Waypoints out;
  std::stringstream points(text);
  std::string point;
  while (std::getline(points, point, ';')) {
    if (point.find_first_not_of(" \t") == std::string::npos) continue;
    std::stringstream coords(point);
    std::string cell;
    Eigen::Vector3d p;
    int n = 0;
    while (std::getline(coords, cell, ',')) {
      if (n == 3) throw InvalidArgument("waypoint '" + point + "' has more than three coordinates");
      p[n++] = parse_double(cell);
    }
    if (n != 3) throw InvalidArgument("waypoint '" + point + "' needs three coordinates");
    out.push_back(p);
  }
  if (out.empty()) throw InvalidArgument("waypoint list is empty");
  return out;
}

std::string format_waypoints(const Waypoints& waypoints) {
  std::string out;
  for (const Eigen::Vector3d& p : waypoints) {
    if (!out.empty()) out += ';';
    out += format_double(p.x()) + ',' + format_double(p.y()) + ',' + format_double(p.z());
  }
  return out;
}

// ---------------------------------------------------------------- mission

const prop::PropellerModel& ModelBank::get(PropellerCondition condition) const {
  const std::shared_ptr<const prop::PropellerModel>* slot = nullptr;
  switch (condition) {
    case PropellerCondition::Normal: slot = &normal; break;
    case PropellerCondition::Bent: slot = &bent; break;
    case PropellerCondition::Cracked: slot = &cracked; break;
  }
  if (slot == nullptr || !*slot) throw InvalidArgument("no propeller model loaded for condition " + prop::to_string(condition));
  return **slot;
}

ModelBank ModelBank::analytic(const prop::DegradationConfig& cfg) {
  return {std::make_shared<prop::AnalyticPropeller>(PropellerCondition::Normal, cfg),
          std::make_shared<prop::AnalyticPropeller>(PropellerCondition::Bent, cfg),
          std::make_shared<prop::AnalyticPropeller>(PropellerCondition::Cracked, cfg)};
}

void MissionConfig::validate() const {
  if (!(duration > 0.0)) throw InvalidArgument("mission: duration must be > 0");
  if (!(physics_dt > 0.0 && physics_dt <= 0.05)) throw InvalidArgument("mission: physics_dt must lie in (0, 0.05]");
  if (!(control_dt >= physics_dt)) throw InvalidArgument("mission: control_dt must be >= physics_dt");
  if (!(record_period >= control_dt)) throw InvalidArgument("mission: record_period must be >= control_dt");
  auto multiple = [](double big, double small) {
    const double r = big / small;
    return std::abs(r - std::round(r)) < 1e-9 * r;
  };
  if (!multiple(control_dt, physics_dt) || !multiple(record_period, control_dt) || !multiple(duration, record_period)) {
    throw InvalidArgument("mission: duration, record_period, control_dt and physics_dt must nest as integer multiples");
  }
  if (!(acceptance_radius > 0.0)) throw InvalidArgument("mission: acceptance_radius must be > 0");
  if (!arena.contains(start)) throw InvalidArgument("mission: start point lies outside the arena");
}

std::size_t MissionConfig::substeps() const { return static_cast<std::size_t>(std::llround(control_dt / physics_dt)); }
std::size_t MissionConfig::ticks_per_record() const {
  return static_cast<std::size_t>(std::llround(record_period / control_dt));
}
std::size_t MissionConfig::tick_count() const { return static_cast<std::size_t>(std::llround(duration / control_dt)); }

std::string mission_params_hash(const sim::QuadParams& p, const ctrl::ControllerGains& g,
                                const calib::UnbalanceProfile& u, const MissionConfig& m, const Waypoints& w) {
  std::ostringstream s;
  auto put = [&](double v) { s << format_double(v) << ';'; };
  for (double v : {p.mass, p.arm_length, p.ixx, p.iyy, p.izz, p.k_f, p.k_tau, p.gravity, p.k_drag}) put(v);
  for (std::size_t i = 0; i < 3; ++i) {
    put(g.kp_pos[i]);
    put(g.kd_pos[i]);
    put(g.kp_att[i]);
    put(g.kd_att[i]);
  }
  for (double v : {g.max_position_error, g.max_tilt, g.rpm_min, g.rpm_max, g.motor_tau}) put(v);
  for (double r : u.ratio) put(r);
  put(u.omega_max);
  for (double v : {m.duration, m.physics_dt, m.control_dt, m.record_period, m.acceptance_radius}) put(v);
  for (int a = 0; a < 3; ++a) put(m.start[a]);
  s << calib::to_string(m.factor_mode) << ';' << format_waypoints(w);
  return hex64(fnv1a64(s.str()));
}

namespace {

// Per-tick motor speed history with linear interpolation; times before the
// first entry read the first entry.
class RpmHistory {
 public:
  RpmHistory(double dt, std::size_t reserve) : dt_(dt) { values_.reserve(reserve); }
  void push(double v) { values_.push_back(v); }
  // Value at `back` seconds before the newest entry.
  double at_lag(double back) const {
    const double pos = static_cast<double>(values_.size() - 1) - back / dt_;
    if (pos <= 0.0) return values_.front();
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= values_.size()) return values_.back();
    return values_[i] + frac * (values_[i + 1] - values_[i]);
  }

 private:
  double dt_;
  std::vector<double> values_;
};

}  // namespace

FlightLog run_mission(const FaultScenario& scenario, const MissionSetup& setup, const ModelBank& models,
                      std::uint64_t seed) {
  const sim::QuadParams& params = setup.params;
  const MissionConfig& mission = setup.mission;
  params.validate();
  setup.gains.validate();
  setup.profile.validate();
  mission.validate();
  if (setup.waypoints.empty()) throw InvalidArgument("mission needs at least one waypoint");
  for (const Eigen::Vector3d& w : setup.waypoints) {
    if (!mission.arena.contains(w)) {
      throw InvalidArgument("waypoint (" + format_waypoints({w}) + ") lies outside the arena");
    }
  }

  FlightLog log;
  log.scenario = scenario;
  log.seed = seed;
  log.params_hash = mission_params_hash(params, setup.gains, setup.profile, mission, setup.waypoints);
  log.waypoint_set = setup.waypoint_set;
  log.period = mission.record_period;
  log.waypoint_visits.assign(setup.waypoints.size(), 0);

  std::array<const prop::PropellerModel*, 4> rotor{};
  for (std::size_t i = 0; i < 4; ++i) rotor[i] = &models.get(scenario.conditions[i]);

  const double hover = sim::hover_rpm(params);
  ctrl::Controller controller(setup.gains, params, hover);
  const std::size_t ticks = mission.tick_count();
  const std::size_t substeps = mission.substeps();
  const std::size_t per_record = mission.ticks_per_record();
  log.records.reserve(ticks / per_record);

  std::vector<RpmHistory> history(4, RpmHistory(mission.control_dt, ticks + 1));
  for (RpmHistory& h : history) h.push(hover);
  std::vector<double> window;

  sim::QuadState state;
  state.x = mission.start.x();
  state.y = mission.start.y();
  state.z = mission.start.z();

  std::size_t active = 0;
  for (std::size_t k = 0; k < ticks; ++k) {
    if ((state.position() - setup.waypoints[active]).norm() < mission.acceptance_radius) {
      ++log.waypoint_visits[active];
      active = (active + 1) % setup.waypoints.size();
    }
    const Eigen::Vector3d& target = setup.waypoints[active];
    const ctrl::MotorCommand& cmd = controller.update(state, target, mission.control_dt);

    std::array<double, 4> thrust{}, torque{};
    for (std::size_t i = 0; i < 4; ++i) {
      const double rpm = controller.motor_rpm()[i];
      history[i].push(rpm);
      const prop::PropellerModel& model = *rotor[i];
      window.resize(model.window());
      for (std::size_t j = 0; j < window.size(); ++j) {
        window[j] = history[i].at_lag(static_cast<double>(window.size() - 1 - j) * model.sample_period());
      }
      const prop::ThrustTorque out = model.evaluate(window);
      const double factor = calib::unbalance_factor(rpm, setup.profile, i + 1, mission.factor_mode);
      const double scale = 1.0 / (factor * factor);
      thrust[i] = std::max(out.thrust, 0.0) * scale;
      torque[i] = std::max(out.torque, 0.0) * scale;
    }
    const sim::BodyWrench wrench = ctrl::allocate(thrust, torque, params);

    if (k % per_record == 0) {
      FlightRecord r;
      r.t = static_cast<double>(k / per_record) * mission.record_period;
      r.x = state.x;
      r.y = state.y;
      r.z = state.z;
      r.vx = state.vx;
      r.vy = state.vy;
      r.vz = state.vz;
      r.roll = state.roll;
      r.pitch = state.pitch;
      r.yaw = state.yaw;
      r.roll_rate = state.roll_rate;
      r.pitch_rate = state.pitch_rate;
      r.yaw_rate = state.yaw_rate;
      r.omega = cmd.rpm;
      r.esc = cmd.esc;
      r.f = thrust;
      r.tau = torque;
      r.delta_x = target.x() - state.x;
      r.delta_y = target.y() - state.y;
      r.delta_z = target.z() - state.z;
      log.records.push_back(r);
    }

    try {
      for (std::size_t s = 0; s < substeps; ++s) state = sim::step_rk4(state, wrench, params, mission.physics_dt);
    } catch (const SimulationFault& e) {
      log.truncated = true;
      log.truncation_reason = e.what();
      break;
    }
  }
  return log;
}

std::vector<calib::HoverSample> hover_samples(const FlightLog& log) {
  std::vector<calib::HoverSample> out;
  out.reserve(log.records.size());
  for (const FlightRecord& r : log.records) {
    out.push_back({r.omega, std::sqrt(r.vx * r.vx + r.vy * r.vy + r.vz * r.vz)});
  }
  return out;
}

// ---------------------------------------------------------------- log I/O

const std::vector<std::string>& flight_log_columns() {
  static const std::vector<std::string> columns{
      "t",       "x",       "y",       "z",       "vx",         "vy",         "vz",       "roll",
      "pitch",   "yaw",     "roll_rate", "pitch_rate", "yaw_rate", "omega1", "omega2",   "omega3",
      "omega4",  "f1",      "f2",      "f3",      "f4",         "tau1",       "tau2",     "tau3",
      "tau4",    "delta_x", "delta_y", "delta_z", "esc1",       "esc2",       "esc3",     "esc4"};
  return columns;
}

namespace {

std::array<double, 32> flatten(const FlightRecord& r) {
  return {r.t,        r.x,          r.y,        r.z,        r.vx,     r.vy,     r.vz,     r.roll,
          r.pitch,    r.yaw,        r.roll_rate, r.pitch_rate, r.yaw_rate, r.omega[0], r.omega[1], r.omega[2],
          r.omega[3], r.f[0],       r.f[1],     r.f[2],     r.f[3],   r.tau[0], r.tau[1], r.tau[2],
          r.tau[3],   r.delta_x,    r.delta_y,  r.delta_z,  r.esc[0], r.esc[1], r.esc[2], r.esc[3]};
}

FlightRecord unflatten(const std::array<double, 32>& v) {
  FlightRecord r;
  r.t = v[0];
  r.x = v[1];
  r.y = v[2];
  r.z = v[3];
  r.vx = v[4];
  r.vy = v[5];
  r.vz = v[6];
  r.roll = v[7];
  r.pitch = v[8];
  r.yaw = v[9];
  r.roll_rate = v[10];
  r.pitch_rate = v[11];
  r.yaw_rate = v[12];
  for (std::size_t i = 0; i < 4; ++i) {
    r.omega[i] = v[13 + i];
    r.f[i] = v[17 + i];
    r.tau[i] = v[21 + i];
    r.esc[i] = v[28 + i];
  }
  r.delta_x = v[25];
  r.delta_y = v[26];
  r.delta_z = v[27];
  return r;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), row, "expected key=value");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key,
                           const std::filesystem::path& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ParseError(path.string(), 0, "missing key '" + key + "'");
  return it->second;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t x : v) {
    if (!out.empty()) out += ',';
    out += std::to_string(x);
  }
  return out;
}

}  // namespace

std::filesystem::path meta_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".meta");
  return p;
}

void write_flight_log(const FlightLog& log, const std::filesystem::path& csv_path) {
  {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + csv_path.string() + "' for writing");
    const auto& cols = flight_log_columns();
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
    out << '\n';
    for (const FlightRecord& r : log.records) {
      const auto v = flatten(r);
      for (std::size_t c = 0; c < v.size(); ++c) out << (c ? "," : "") << format_double(v[c]);
      out << '\n';
    }
    if (!out) throw IoError("failed writing '" + csv_path.string() + "'");
  }
  const std::filesystem::path mp = meta_path(csv_path);
  std::ofstream meta(mp, std::ios::trunc);
  if (!meta) throw IoError("cannot open '" + mp.string() + "' for writing");
  meta << "label=" << log.label() << '\n'
       << "scenario=" << log.scenario.code() << '\n'
       << "seed=" << log.seed << '\n'
       << "params_hash=" << log.params_hash << '\n'
       << "waypoint_set=" << log.waypoint_set << '\n'
       << "period=" << format_double(log.period) << '\n'
       << "records=" << log.records.size() << '\n'
       << "truncated=" << (log.truncated ? 1 : 0) << '\n'
       << "truncation_reason=" << log.truncation_reason << '\n'
       << "waypoint_visits=" << join_sizes(log.waypoint_visits) << '\n';
  if (!meta) throw IoError("failed writing '" + mp.string() + "'");
}

FlightLog read_flight_log(const std::filesystem::path& csv_path) {
  const std::filesystem::path mp = meta_path(csv_path);
  const auto kv = read_key_values(mp);
  FlightLog log;
  log.scenario = parse_scenario_code(require(kv, "scenario", mp));
  if (std::stoi(require(kv, "label", mp)) != log.label()) {
    throw ParseError(mp.string(), 0, "label does not match the scenario code");
  }
  log.seed = std::stoull(require(kv, "seed", mp));
  log.params_hash = require(kv, "params_hash", mp);
  log.waypoint_set = require(kv, "waypoint_set", mp);
  log.period = parse_double(require(kv, "period", mp));
  log.truncated = require(kv, "truncated", mp) == "1";
  log.truncation_reason = require(kv, "truncation_reason", mp);
  {
    std::stringstream visits(require(kv, "waypoint_visits", mp));
    std::string cell;
    while (std::getline(visits, cell, ',')) log.waypoint_visits.push_back(std::stoull(cell));
  }

  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open flight log '" + csv_path.string() + "'");
  std::string line;
  std::size_t row = 1;
  if (!std::getline(in, line)) throw ParseError(csv_path.string(), row, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    std::string expected;
    for (const std::string& c : flight_log_columns()) expected += (expected.empty() ? "" : ",") + c;
    if (line != expected) throw ParseError(csv_path.string(), row, "unexpected header (channel schema mismatch)");
  }
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 32> v{};
    std::size_t n = 0;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      const std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      if (n == v.size()) throw ParseError(csv_path.string(), row, "too many columns");
      try {
        v[n++] = parse_double(cell);
      } catch (const InvalidArgument&) {
        throw ParseError(csv_path.string(), row, "column " + std::to_string(n) + " is not a number");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (n != v.size()) throw ParseError(csv_path.string(), row, "expected 32 columns, got " + std::to_string(n));
    log.records.push_back(unflatten(v));
  }
  const std::size_t expected = std::stoull(require(kv, "records", mp));
  if (log.records.size() != expected) {
    throw ParseError(csv_path.string(), row, "has " + std::to_string(log.records.size()) + " records, metadata says " +
                                                 std::to_string(expected));
  }
  return log;
}

// ---------------------------------------------------------------- windows

const std::array<std::string, kChannels>& channel_names() {
  static const std::array<std::string, kChannels> names{"omega1", "omega2", "omega3",     "omega4",     "roll",
                                                        "pitch",  "yaw",    "roll_rate", "pitch_rate", "yaw_rate"};
  return names;
}

void WindowDataset::materialize(const WindowRef& ref, const Normalization& norm, double* out) const {
  const std::vector<double>& s = series_.at(ref.log);
  const double* src = s.data() + static_cast<std::size_t>(ref.offset) * kChannels;
  std::array<double, kChannels> inv{};
  for (std::size_t c = 0; c < kChannels; ++c) inv[c] = 1.0 / norm.stddev[c];
  for (std::size_t t = 0; t < window_; ++t) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      out[t * kChannels + c] = (src[t * kChannels + c] - norm.mean[c]) * inv[c];
    }
  }
}

WindowDataset window_dataset(std::span<const FlightLog> logs, std::size_t window, std::size_t hop) {
  if (window == 0 || hop == 0) throw InvalidArgument("window_dataset: window and hop must be >= 1");
  WindowDataset ds;
  ds.window_ = window;
  ds.hop_ = hop;
  for (std::size_t li = 0; li < logs.size(); ++li) {
    const FlightLog& log = logs[li];
    std::vector<double> series;
    series.reserve(log.records.size() * kChannels);
    for (const FlightRecord& r : log.records) {
      series.insert(series.end(), {r.omega[0], r.omega[1], r.omega[2], r.omega[3], r.roll, r.pitch, r.yaw, r.roll_rate,
                                   r.pitch_rate, r.yaw_rate});
    }
    const auto log_index = static_cast<std::uint32_t>(ds.series_.size());
    ds.series_.push_back(std::move(series));
    ds.labels_.push_back(log.label());
    if (log.records.size() < window) {
      ds.warnings_.push_back("log " + std::to_string(li) + " (label " + std::to_string(log.label()) + ") has " +
                             std::to_string(log.records.size()) + " records, fewer than the window; skipped");
      continue;
    }
    for (std::size_t off = 0; off + window <= log.records.size(); off += hop) {
      ds.windows_.push_back({log_index, static_cast<std::uint32_t>(off), log.label()});
    }
  }
  return ds;
}

SplitMode parse_split_mode(const std::string& name) {
  if (name == "window") return SplitMode::Window;
  if (name == "segment") return SplitMode::Segment;
  throw InvalidArgument("unknown split mode '" + name + "' (expected window or segment)");
}

std::string to_string(SplitMode mode) { return mode == SplitMode::Window ? "window" : "segment"; }

namespace {

bool ref_less(const WindowRef& a, const WindowRef& b) {
  return a.log != b.log ? a.log < b.log : a.offset < b.offset;
}

void window_range(const WindowDataset& ds, std::uint32_t log, std::size_t begin, std::size_t end,
                  std::vector<WindowRef>& out) {
  for (std::size_t off = begin; off + ds.window() <= end; off += ds.hop()) {
    out.push_back({log, static_cast<std::uint32_t>(off), ds.log_label(log)});
  }
}

}  // namespace

Split split_dataset(const WindowDataset& dataset, double ratio, SplitMode mode, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split ratio must lie in (0, 1)");
  if (dataset.windows().empty()) throw InvalidArgument("cannot split an empty dataset");
  Split split;
  std::mt19937_64 rng(seed);
  if (mode == SplitMode::Window) {
    std::vector<WindowRef> all = dataset.windows();
    std::shuffle(all.begin(), all.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(all.size())));
    split.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  } else {
    for (std::uint32_t li = 0; li < dataset.log_count(); ++li) {
      const std::size_t n = dataset.records(li);
      if (n < dataset.window()) continue;
      const auto n_test = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(n)));
      const std::size_t start = std::uniform_int_distribution<std::size_t>(0, n - n_test)(rng);
      window_range(dataset, li, 0, start, split.train);
      window_range(dataset, li, start, start + n_test, split.test);
      window_range(dataset, li, start + n_test, n, split.train);
    }
  }
  std::sort(split.train.begin(), split.train.end(), ref_less);
  std::sort(split.test.begin(), split.test.end(), ref_less);
  return split;
}

Normalization compute_normalization(const WindowDataset& dataset, std::span<const WindowRef> refs) {
  if (refs.empty()) throw InvalidArgument("compute_normalization: no windows");
  std::vector<std::vector<bool>> covered(dataset.log_count());
  for (std::size_t li = 0; li < dataset.log_count(); ++li) covered[li].assign(dataset.records(li), false);
  for (const WindowRef& r : refs) {
    std::fill_n(covered[r.log].begin() + r.offset, dataset.window(), true);
  }
  std::array<double, kChannels> sum{}, sq{};
  double count = 0.0;
  for (std::size_t li = 0; li < dataset.log_count(); ++li) {
    for (std::size_t k = 0; k < covered[li].size(); ++k) {
      if (!covered[li][k]) continue;
      count += 1.0;
      for (std::size_t c = 0; c < kChannels; ++c) sum[c] += dataset.value(li, k, c);
    }
  }
  Normalization norm;
  for (std::size_t c = 0; c < kChannels; ++c) norm.mean[c] = sum[c] / count;
  for (std::size_t li = 0; li < dataset.log_count(); ++li) {
    for (std::size_t k = 0; k < covered[li].size(); ++k) {
      if (!covered[li][k]) continue;
      for (std::size_t c = 0; c < kChannels; ++c) {
        const double d = dataset.value(li, k, c) - norm.mean[c];
        sq[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < kChannels; ++c) {
    const double sd = std::sqrt(sq[c] / count);
    norm.stddev[c] = sd > 1e-12 ? sd : 1.0;
  }
  return norm;
}

// ---------------------------------------------------------------- manifest

namespace {

std::string join_doubles(const std::array<double, kChannels>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ",") + format_double(x);
  return out;
}

std::array<double, kChannels> split_doubles(const std::string& text, const std::filesystem::path& path) {
  std::array<double, kChannels> out{};
  std::stringstream ss(text);
  std::string cell;
  std::size_t n = 0;
  while (std::getline(ss, cell, ',')) {
    if (n == kChannels) throw ParseError(path.string(), 0, "too many normalization values");
    out[n++] = parse_double(cell);
  }
  if (n != kChannels) throw ParseError(path.string(), 0, "expected 10 normalization values");
  return out;
}

}  // namespace

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "format=propfault-dataset-1\n"
      << "params_hash=" << m.params_hash << '\n'
      << "channels=";
  for (std::size_t c = 0; c < kChannels; ++c) out << (c ? "," : "") << channel_names()[c];
  out << '\n'
      << "window=" << m.window << '\n'
      << "hop=" << m.hop << '\n'
      << "split_mode=" << to_string(m.split_mode) << '\n'
      << "split_ratio=" << format_double(m.split_ratio) << '\n'
      << "split_seed=" << m.split_seed << '\n'
      << "train_count=" << m.train_count << '\n'
      << "test_count=" << m.test_count << '\n'
      << "norm_mean=" << join_doubles(m.normalization.mean) << '\n'
      << "norm_std=" << join_doubles(m.normalization.stddev) << '\n'
      << "log_count=" << m.log_files.size() << '\n';
  for (std::size_t i = 0; i < m.log_files.size(); ++i) {
    out << "log." << i << '=' << m.log_files[i] << ',' << m.log_labels[i] << ',' << m.log_records[i] << ','
        << (m.log_truncated[i] ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto kv = read_key_values(path);
  if (require(kv, "format", path) != "propfault-dataset-1") throw ParseError(path.string(), 1, "unknown manifest format");
  std::string channels;
  for (std::size_t c = 0; c < kChannels; ++c) channels += (c ? "," : "") + channel_names()[c];
  if (require(kv, "channels", path) != channels) {
    throw ParseError(path.string(), 0, "channel schema mismatch: expected " + channels);
  }
  DatasetManifest m;
  m.params_hash = require(kv, "params_hash", path);
  m.window = std::stoull(require(kv, "window", path));
  m.hop = std::stoull(require(kv, "hop", path));
  m.split_mode = parse_split_mode(require(kv, "split_mode", path));
  m.split_ratio = parse_double(require(kv, "split_ratio", path));
  m.split_seed = std::stoull(require(kv, "split_seed", path));
  m.train_count = std::stoull(require(kv, "train_count", path));
  m.test_count = std::stoull(require(kv, "test_count", path));
  m.normalization.mean = split_doubles(require(kv, "norm_mean", path), path);
  m.normalization.stddev = split_doubles(require(kv, "norm_std", path), path);
  const std::size_t n = std::stoull(require(kv, "log_count", path));
  for (std::size_t i = 0; i < n; ++i) {
    std::stringstream ss(require(kv, "log." + std::to_string(i), path));
    std::string file, label, records, truncated;
    if (!std::getline(ss, file, ',') || !std::getline(ss, label, ',') || !std::getline(ss, records, ',') ||
        !std::getline(ss, truncated, ',')) {
      throw ParseError(path.string(), 0, "malformed entry log." + std::to_string(i));
    }
    m.log_files.push_back(file);
    m.log_labels.push_back(std::stoi(label));
    m.log_records.push_back(std::stoull(records));
    m.log_truncated.push_back(truncated == "1");
  }
  return m;
}

LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
  LoadedDataset out;
  out.manifest = read_manifest(manifest_path);
  const std::filesystem::path dir = manifest_path.parent_path();
  for (const std::string& file : out.manifest.log_files) out.logs.push_back(read_flight_log(dir / file));
  out.windows = window_dataset(out.logs, out.manifest.window, out.manifest.hop);
  out.split = split_dataset(out.windows, out.manifest.split_ratio, out.manifest.split_mode, out.manifest.split_seed);
  if (out.split.train.size() != out.manifest.train_count || out.split.test.size() != out.manifest.test_count) {
    throw ParseError(manifest_path.string(), 0, "rebuilt split does not match the recorded window counts");
  }
  return out;
}

}  // namespace propfault::data
