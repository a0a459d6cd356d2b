#include "propfault/propeller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Core>

#include "propfault/error.hpp"
#include "propfault/nn/loss.hpp"

namespace propfault::prop {

std::string to_string(PropellerCondition condition) {
  switch (condition) {
    case PropellerCondition::Normal: return "normal";
    case PropellerCondition::Bent: return "bent";
    case PropellerCondition::Cracked: return "cracked";
  }
  return "normal";
}

PropellerCondition parse_condition(const std::string& name) {
  if (name == "normal" || name == "N") return PropellerCondition::Normal;
  if (name == "bent" || name == "B") return PropellerCondition::Bent;
  if (name == "cracked" || name == "C") return PropellerCondition::Cracked;
  throw InvalidArgument("unknown propeller condition '" + name + "'");
}

char condition_code(PropellerCondition condition) {
  switch (condition) {
    case PropellerCondition::Normal: return 'N';
    case PropellerCondition::Bent: return 'B';
    case PropellerCondition::Cracked: return 'C';
  }
  return 'N';
}

ThrustTorque analytic_thrust_torque(double omega, double k_f, double k_tau) {
  if (!(omega >= 0.0)) throw InvalidArgument("analytic_thrust_torque: negative rotor speed");
  const double w2 = omega * omega;
  return {k_f * w2, k_tau * w2};
}

// ---------------------------------------------------------------- ESC map

namespace {
constexpr double kEscA = -0.0062;
constexpr double kEscB = 29.37;
constexpr double kEscC = -22992.0;
}  // namespace

double esc_to_rpm(double esc) {
  if (!(esc >= kEscMin && esc <= kEscMax)) {
    throw InvalidArgument("esc_to_rpm: command " + std::to_string(esc) + " outside [1000, 2000]");
  }
  return kEscA * esc * esc + kEscB * esc + kEscC;
}

double rpm_to_esc(double rpm) {
  const double lo = esc_to_rpm(kEscMin);
  const double hi = esc_to_rpm(kEscMax);
  const double target = std::clamp(rpm, lo, hi);
  // a e^2 + b e + (c - rpm) = 0, a < 0; the increasing branch is the smaller root.
  const double disc = kEscB * kEscB - 4.0 * kEscA * (kEscC - target);
  const double esc = (-kEscB + std::sqrt(std::max(disc, 0.0))) / (2.0 * kEscA);
  return std::clamp(esc, kEscMin, kEscMax);
}

// ---------------------------------------------------------------- degradation

void DegradationConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string("degradation: ") + name + " must be > 0");
  };
  positive(k_f, "k_f");
  positive(k_tau, "k_tau");
  positive(omega_max, "omega_max");
  positive(duration, "duration");
  positive(period, "period");
  positive(ramp_period, "ramp_period");
  for (double loss : {bent_thrust_loss, bent_torque_loss, cracked_thrust_loss, cracked_torque_loss}) {
    if (!(loss >= 0.0 && loss < 1.0)) throw InvalidArgument("degradation: loss coefficients must lie in [0, 1)");
  }
  if (!(thrust_noise >= 0.0) || !(torque_noise >= 0.0)) throw InvalidArgument("degradation: noise must be >= 0");
}

namespace {
double speed_ratio(double omega, const DegradationConfig& cfg) { return std::min(omega / cfg.omega_max, 1.0); }
}  // namespace

double thrust_efficiency(PropellerCondition condition, double omega, const DegradationConfig& cfg) {
  const double s = speed_ratio(omega, cfg);
  switch (condition) {
    case PropellerCondition::Normal: return 1.0;
    case PropellerCondition::Bent: return 1.0 - cfg.bent_thrust_loss * s;
    case PropellerCondition::Cracked: return 1.0 - cfg.cracked_thrust_loss * s * s;
  }
  return 1.0;
}

double torque_efficiency(PropellerCondition condition, double omega, const DegradationConfig& cfg) {
  const double s = speed_ratio(omega, cfg);
  switch (condition) {
    case PropellerCondition::Normal: return 1.0;
    case PropellerCondition::Bent: return 1.0 - cfg.bent_torque_loss * s;
    case PropellerCondition::Cracked: return 1.0 - cfg.cracked_torque_loss * s * s;
  }
  return 1.0;
}

ThrustTorque degraded_thrust_torque(PropellerCondition condition, double omega, const DegradationConfig& cfg) {
  ThrustTorque base = analytic_thrust_torque(omega, cfg.k_f, cfg.k_tau);
  if (condition == PropellerCondition::Normal) return base;
  return {base.thrust * thrust_efficiency(condition, omega, cfg), base.torque * torque_efficiency(condition, omega, cfg)};
}

ThrustTorque AnalyticPropeller::evaluate(std::span<const double> rpm_window) const {
  if (rpm_window.empty()) throw InvalidArgument("analytic propeller: empty RPM window");
  return degraded_thrust_torque(condition_, std::max(rpm_window.back(), 0.0), cfg_);
}

// ---------------------------------------------------------------- loadcell

LoadcellTrace synth_loadcell_trace(PropellerCondition condition, const DegradationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto count = static_cast<std::size_t>(std::llround(cfg.duration / cfg.period));
  LoadcellTrace trace;
  trace.condition = condition;
  trace.period = cfg.period;
  trace.samples.reserve(count);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < count; ++k) {
    LoadcellSample s;
    s.t = static_cast<double>(k) * cfg.period;
    const double phase = std::fmod(s.t, cfg.ramp_period) / cfg.ramp_period;
    const double sweep = phase < 0.5 ? 2.0 * phase : 2.0 - 2.0 * phase;
    s.esc = kEscMin + (kEscMax - kEscMin) * sweep;
    s.rpm = esc_to_rpm(s.esc);
    const ThrustTorque clean = degraded_thrust_torque(condition, s.rpm, cfg);
    const double n_thrust = unit(rng);
    const double n_torque = unit(rng);
    s.thrust = std::max(0.0, clean.thrust + cfg.thrust_noise * n_thrust);
    s.torque = std::max(0.0, clean.torque + cfg.torque_noise * n_torque);
    trace.samples.push_back(s);
  }
  return trace;
}

void write_loadcell_csv(const LoadcellTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "t,esc,rpm,thrust,torque\n";
  for (const LoadcellSample& s : trace.samples) {
    out << nn::format_double(s.t) << ',' << nn::format_double(s.esc) << ',' << nn::format_double(s.rpm) << ','
        << nn::format_double(s.thrust) << ',' << nn::format_double(s.torque) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

LoadcellTrace read_loadcell_csv(const std::filesystem::path& path, PropellerCondition condition) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loadcell trace '" + path.string() + "'");
  std::string line;
  std::size_t row = 1;
  if (!std::getline(in, line)) throw ParseError(path.string(), row, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,esc,rpm,thrust,torque") {
    throw ParseError(path.string(), row, "expected header 't,esc,rpm,thrust,torque'");
  }
  LoadcellTrace trace;
  trace.condition = condition;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::stringstream fields(line);
    std::string cell;
    double v[5];
    std::size_t n = 0;
    while (std::getline(fields, cell, ',')) {
      if (n == 5) throw ParseError(path.string(), row, "too many columns");
      try {
        v[n++] = nn::parse_double(cell);
      } catch (const InvalidArgument&) {
        throw ParseError(path.string(), row, "column " + std::to_string(n) + " is not a number: '" + cell + "'");
      }
    }
    if (n != 5) throw ParseError(path.string(), row, "expected 5 columns, got " + std::to_string(n));
    trace.samples.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  if (trace.samples.size() < 2) throw ParseError(path.string(), row, "trace needs at least two samples");
  trace.period = trace.samples[1].t - trace.samples[0].t;
  if (!(trace.period > 0.0)) throw ParseError(path.string(), 3, "timestamps must be strictly increasing");
  return trace;
}

// ---------------------------------------------------------------- windows

WindowedSeries make_windows(std::span<const double> inputs, std::size_t in_dim, std::span<const double> targets,
                            std::size_t out_dim, std::size_t window) {
  if (in_dim == 0 || out_dim == 0 || window == 0) throw InvalidArgument("make_windows: zero dimension");
  if (inputs.size() % in_dim != 0 || targets.size() % out_dim != 0) {
    throw InvalidArgument("make_windows: series length not a multiple of its dimension");
  }
  const std::size_t n = inputs.size() / in_dim;
  if (targets.size() / out_dim != n) throw InvalidArgument("make_windows: inputs and targets differ in length");
  if (n <= window) {
    throw InvalidArgument("make_windows: series of " + std::to_string(n) + " samples is not longer than window " +
                          std::to_string(window));
  }
  WindowedSeries out;
  out.count = n - window;
  out.window = window;
  out.in_dim = in_dim;
  out.out_dim = out_dim;
  out.inputs.reserve(out.count * window * in_dim);
  out.targets.reserve(out.count * out_dim);
  for (std::size_t i = 0; i < out.count; ++i) {
    out.inputs.insert(out.inputs.end(), inputs.begin() + i * in_dim, inputs.begin() + (i + window) * in_dim);
    out.targets.insert(out.targets.end(), targets.begin() + (i + window) * out_dim,
                       targets.begin() + (i + window + 1) * out_dim);
  }
  return out;
}

// ---------------------------------------------------------------- regressor

void RegressorConfig::validate() const {
  if (window < 1) throw InvalidArgument("regressor: window must be >= 1");
  if (lstm1_units < 1 || lstm2_units < 1 || dense_units < 1) throw InvalidArgument("regressor: layer sizes must be >= 1");
  if (batch_size < 1) throw InvalidArgument("regressor: batch_size must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidArgument("regressor: train_fraction in (0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw InvalidArgument("regressor: validation_fraction in [0, 1)");
  }
}

namespace {

constexpr double kLogFloor = 1e-9;

double scaled(double value, double lo, double hi) { return (std::log(std::max(value, kLogFloor)) - lo) / (hi - lo); }
double unscaled(double v, double lo, double hi) { return std::exp(v * (hi - lo) + lo); }

}  // namespace

PropellerRegressor::PropellerRegressor(PropellerCondition condition, const RegressorConfig& cfg, std::uint64_t seed)
    : condition_(condition),
      window_(cfg.window),
      lstm1_(1, cfg.lstm1_units),
      lstm2_(cfg.lstm1_units, cfg.lstm2_units),
      dense1_(cfg.lstm2_units, cfg.dense_units),
      dense2_(cfg.dense_units, 2) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  lstm1_.init(rng);
  lstm2_.init(rng);
  dense1_.init(rng);
  dense2_.init(rng);
}

std::vector<double> PropellerRegressor::forward_normalized(std::span<const double> window) const {
  nn::LstmLayer::Cache c1, c2;
  lstm1_.forward(window.data(), window.size(), c1);
  lstm2_.forward(c1.h.data(), window.size(), c2);
  const std::size_t k2 = lstm2_.hidden();
  std::span<const double> last(c2.h.data() + (window.size() - 1) * k2, k2);
  std::vector<double> hidden(dense1_.out_dim());
  dense1_.forward(last, hidden);
  std::vector<double> out(2);
  dense2_.forward(hidden, out);
  return out;
}

double PropellerRegressor::accumulate_gradients(std::span<const double> window, std::span<const double> target) {
  const std::size_t steps = window.size();
  nn::LstmLayer::Cache c1, c2;
  lstm1_.forward(window.data(), steps, c1);
  lstm2_.forward(c1.h.data(), steps, c2);
  const std::size_t k1 = lstm1_.hidden();
  const std::size_t k2 = lstm2_.hidden();
  std::span<const double> last(c2.h.data() + (steps - 1) * k2, k2);
  std::vector<double> hidden(dense1_.out_dim());
  dense1_.forward(last, hidden);
  std::vector<double> out(2);
  dense2_.forward(hidden, out);

  std::vector<double> d_out(2);
  const double loss = nn::mse(out, target, d_out);
  std::vector<double> d_hidden(hidden.size());
  dense2_.backward(hidden, d_out, d_hidden);
  std::vector<double> dh2(steps * k2, 0.0);
  dense1_.backward(last, d_hidden, std::span<double>(dh2.data() + (steps - 1) * k2, k2));
  std::vector<double> dh1(steps * k1, 0.0);
  lstm2_.backward(c2, dh2.data(), dh1.data());
  lstm1_.backward(c1, dh1.data(), nullptr);
  return loss;
}

double PropellerRegressor::accumulate_batch(std::span<const double> windows, std::span<const double> targets,
                                            std::size_t batch) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t steps = window_;
  if (batch == 0 || windows.size() != batch * steps || targets.size() != batch * 2) {
    throw InvalidArgument("propeller regressor: batch shape mismatch");
  }
  const auto ix = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  const std::size_t k1 = lstm1_.hidden(), k2 = lstm2_.hidden(), hd = dense1_.out_dim();

  std::vector<double> input(steps * batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) input[t * batch + b] = windows[b * steps + t];
  }
  nn::LstmLayer::BatchCache c1, c2;
  lstm1_.forward_batch(input.data(), steps, batch, c1);
  lstm2_.forward_batch(c1.h.data(), steps, batch, c2);
  Eigen::Map<const RowMat> last(c2.h.data() + (steps - 1) * batch * k2, ix(batch), ix(k2));
  Eigen::Map<const RowMat> w1(dense1_.kernel.data(), ix(k2), ix(hd));
  Eigen::Map<const RowMat> w2(dense2_.kernel.data(), ix(hd), 2);
  RowMat hidden = last * w1;
  hidden.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(dense1_.bias.data(), ix(hd));
  RowMat out = hidden * w2;
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(dense2_.bias.data(), 2);

  Eigen::Map<const RowMat> tgt(targets.data(), ix(batch), 2);
  const RowMat diff = out - tgt;
  const double inv_b = 1.0 / static_cast<double>(batch);
  const double loss = 0.5 * diff.squaredNorm() * inv_b;
  // d(mean over batch of 0.5 |diff|^2) = diff / batch.
  const RowMat d_out = diff * inv_b;

  Eigen::Map<RowMat>(dense2_.grad_kernel.data(), ix(hd), 2).noalias() += hidden.transpose() * d_out;
  nn::add_column_sums(d_out.data(), batch, 2, dense2_.grad_bias.data());
  const RowMat d_hidden = d_out * w2.transpose();
  Eigen::Map<RowMat>(dense1_.grad_kernel.data(), ix(k2), ix(hd)).noalias() += last.transpose() * d_hidden;
  nn::add_column_sums(d_hidden.data(), batch, hd, dense1_.grad_bias.data());

  std::vector<double> dh2(steps * batch * k2, 0.0);
  Eigen::Map<RowMat>(dh2.data() + (steps - 1) * batch * k2, ix(batch), ix(k2)).noalias() = d_hidden * w1.transpose();
  std::vector<double> dh1(steps * batch * k1, 0.0);
  lstm2_.backward_batch(c2, dh2.data(), dh1.data());
  lstm1_.backward_batch(c1, dh1.data(), nullptr);
  return loss;
}

std::vector<nn::Param> PropellerRegressor::parameters() {
  std::vector<nn::Param> params;
  lstm1_.collect(params, "lstm1");
  lstm2_.collect(params, "lstm2");
  dense1_.collect(params, "dense1");
  dense2_.collect(params, "dense2");
  return params;
}

void PropellerRegressor::zero_grad() {
  lstm1_.zero_grad();
  lstm2_.zero_grad();
  dense1_.zero_grad();
  dense2_.zero_grad();
}

ThrustTorque PropellerRegressor::predict(std::span<const double> rpm_window) const {
  if (rpm_window.size() != window_) {
    throw InvalidArgument("propeller regressor: expected a window of " + std::to_string(window_) + " RPM values, got " +
                          std::to_string(rpm_window.size()));
  }
  std::vector<double> x(window_);
  for (std::size_t i = 0; i < window_; ++i) x[i] = scaled(rpm_window[i], scaling_.log_rpm_min, scaling_.log_rpm_max);
  const std::vector<double> y = forward_normalized(x);
  return {unscaled(y[0], scaling_.log_thrust_min, scaling_.log_thrust_max),
          unscaled(y[1], scaling_.log_torque_min, scaling_.log_torque_max)};
}

nn::Checkpoint PropellerRegressor::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.meta["kind"] = "propeller-regressor";
  ck.meta["condition"] = to_string(condition_);
  ck.meta["window"] = std::to_string(window_);
  ck.meta["sample_period"] = nn::format_double(sample_period_);
  ck.meta["lstm1_units"] = std::to_string(lstm1_.hidden());
  ck.meta["lstm2_units"] = std::to_string(lstm2_.hidden());
  ck.meta["dense_units"] = std::to_string(dense1_.out_dim());
  ck.meta["log_rpm_min"] = nn::format_double(scaling_.log_rpm_min);
  ck.meta["log_rpm_max"] = nn::format_double(scaling_.log_rpm_max);
  ck.meta["log_thrust_min"] = nn::format_double(scaling_.log_thrust_min);
  ck.meta["log_thrust_max"] = nn::format_double(scaling_.log_thrust_max);
  ck.meta["log_torque_min"] = nn::format_double(scaling_.log_torque_min);
  ck.meta["log_torque_max"] = nn::format_double(scaling_.log_torque_max);
  auto& self = const_cast<PropellerRegressor&>(*this);
  for (const nn::Param& p : self.parameters()) ck.add(p.name, *p.value);
  return ck;
}

PropellerRegressor PropellerRegressor::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.get("kind") != "propeller-regressor") throw IoError("checkpoint is not a propeller regressor");
  RegressorConfig cfg;
  cfg.window = std::stoul(ck.get("window"));
  cfg.lstm1_units = std::stoul(ck.get("lstm1_units"));
  cfg.lstm2_units = std::stoul(ck.get("lstm2_units"));
  cfg.dense_units = std::stoul(ck.get("dense_units"));
  PropellerRegressor reg(parse_condition(ck.get("condition")), cfg, 0);
  reg.sample_period_ = nn::parse_double(ck.get("sample_period"));
  reg.scaling_.log_rpm_min = nn::parse_double(ck.get("log_rpm_min"));
  reg.scaling_.log_rpm_max = nn::parse_double(ck.get("log_rpm_max"));
  reg.scaling_.log_thrust_min = nn::parse_double(ck.get("log_thrust_min"));
  reg.scaling_.log_thrust_max = nn::parse_double(ck.get("log_thrust_max"));
  reg.scaling_.log_torque_min = nn::parse_double(ck.get("log_torque_min"));
  reg.scaling_.log_torque_max = nn::parse_double(ck.get("log_torque_max"));
  for (const nn::Param& p : reg.parameters()) {
    const nn::Tensor& t = ck.tensor(p.name);
    if (t.shape() != p.value->shape()) throw IoError("checkpoint tensor '" + p.name + "' has the wrong shape");
    *p.value = t;
  }
  return reg;
}

void PropellerRegressor::save(const std::filesystem::path& path) const { nn::save_checkpoint(to_checkpoint(), path); }

PropellerRegressor PropellerRegressor::load(const std::filesystem::path& path) {
  return from_checkpoint(nn::load_checkpoint(path));
}

PropellerRegressor train_regressor(const LoadcellTrace& trace, const RegressorConfig& cfg, std::uint64_t seed,
                                   RegressorTrainingReport* report) {
  cfg.validate();
  const std::size_t n = trace.size();
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(n)));
  if (n_train <= cfg.window + 1) {
    throw InvalidArgument("train_regressor: trace of " + std::to_string(n) + " samples too short for window " +
                          std::to_string(cfg.window));
  }

  PropellerRegressor reg(trace.condition, cfg, seed);
  reg.sample_period_ = trace.period;

  // Scaling from the training segment only.
  RegressorScaling& sc = reg.scaling_;
  sc.log_rpm_min = sc.log_thrust_min = sc.log_torque_min = std::numeric_limits<double>::infinity();
  sc.log_rpm_max = sc.log_thrust_max = sc.log_torque_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_train; ++i) {
    const LoadcellSample& s = trace.samples[i];
    const double lr = std::log(std::max(s.rpm, kLogFloor));
    const double lf = std::log(std::max(s.thrust, kLogFloor));
    const double lt = std::log(std::max(s.torque, kLogFloor));
    sc.log_rpm_min = std::min(sc.log_rpm_min, lr);
    sc.log_rpm_max = std::max(sc.log_rpm_max, lr);
    sc.log_thrust_min = std::min(sc.log_thrust_min, lf);
    sc.log_thrust_max = std::max(sc.log_thrust_max, lf);
    sc.log_torque_min = std::min(sc.log_torque_min, lt);
    sc.log_torque_max = std::max(sc.log_torque_max, lt);
  }
  if (!(sc.log_rpm_max > sc.log_rpm_min) || !(sc.log_thrust_max > sc.log_thrust_min) ||
      !(sc.log_torque_max > sc.log_torque_min)) {
    throw InvalidArgument("train_regressor: training segment has no RPM/thrust/torque variation");
  }

  std::vector<double> inputs(n_train), targets(2 * n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    const LoadcellSample& s = trace.samples[i];
    inputs[i] = scaled(s.rpm, sc.log_rpm_min, sc.log_rpm_max);
    targets[2 * i] = scaled(s.thrust, sc.log_thrust_min, sc.log_thrust_max);
    targets[2 * i + 1] = scaled(s.torque, sc.log_torque_min, sc.log_torque_max);
  }
  const WindowedSeries data = make_windows(inputs, 1, targets, 2, cfg.window);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(data.count)));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
  std::sort(val_idx.begin(), val_idx.end());

  auto window_of = [&](std::size_t i) { return std::span<const double>(data.inputs.data() + i * cfg.window, cfg.window); };
  auto target_of = [&](std::size_t i) { return std::span<const double>(data.targets.data() + 2 * i, 2); };

  auto validation_mse = [&]() {
    const std::vector<std::size_t>& idx = val_idx.empty() ? train_idx : val_idx;
    double total = 0.0;
    for (std::size_t i : idx) total += nn::mse(reg.forward_normalized(window_of(i)), target_of(i));
    return total / static_cast<double>(idx.size());
  };

  nn::Optimizer optimizer(cfg.optimizer);
  std::vector<nn::Param> params = reg.parameters();
  std::vector<nn::Tensor> best_weights;
  auto snapshot = [&]() {
    best_weights.clear();
    for (const nn::Param& p : params) best_weights.push_back(*p.value);
  };
  snapshot();

  RegressorTrainingReport local;
  RegressorTrainingReport& rep = report ? *report : local;
  rep = {};
  double best = validation_mse();
  rep.best_validation_mse = best;
  std::size_t stale = 0;

  std::vector<double> batch_windows, batch_targets;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, train_idx.size());
      batch_windows.clear();
      batch_targets.clear();
      for (std::size_t b = start; b < stop; ++b) {
        const auto w = window_of(train_idx[b]);
        const auto t = target_of(train_idx[b]);
        batch_windows.insert(batch_windows.end(), w.begin(), w.end());
        batch_targets.insert(batch_targets.end(), t.begin(), t.end());
      }
      reg.zero_grad();
      epoch_loss += reg.accumulate_batch(batch_windows, batch_targets, stop - start) * static_cast<double>(stop - start);
      optimizer.step(params);
    }
    epoch_loss /= static_cast<double>(train_idx.size());
    if (!std::isfinite(epoch_loss)) {
      throw TrainingDiverged("propeller regressor (" + to_string(trace.condition) + "): loss became non-finite at epoch " +
                             std::to_string(epoch));
    }
    const double val = validation_mse();
    rep.train_mse.push_back(epoch_loss);
    rep.validation_mse.push_back(val);
    rep.epochs_run = epoch;
    if (val < best - cfg.min_delta) {
      best = val;
      rep.best_epoch = epoch;
      rep.best_validation_mse = val;
      snapshot();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = best_weights[i];
  return reg;
}

ErrorPct mean_relative_error_pct(std::span<const ThrustTorque> predicted, std::span<const ThrustTorque> truth) {
  if (predicted.size() != truth.size()) throw InvalidArgument("mean_relative_error_pct: size mismatch");
  double sum_f = 0.0, sum_t = 0.0;
  std::size_t n_f = 0, n_t = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].thrust > 0.0) {
      sum_f += std::abs(predicted[i].thrust - truth[i].thrust) / truth[i].thrust;
      ++n_f;
    }
    if (truth[i].torque > 0.0) {
      sum_t += std::abs(predicted[i].torque - truth[i].torque) / truth[i].torque;
      ++n_t;
    }
  }
  return {n_f ? 100.0 * sum_f / static_cast<double>(n_f) : 0.0, n_t ? 100.0 * sum_t / static_cast<double>(n_t) : 0.0};
}

ErrorPct eval_error(const PropellerRegressor& regressor, const LoadcellTrace& trace, double train_fraction) {
  if (trace.condition != regressor.condition()) {
    throw InvalidArgument("eval_error: trace condition " + to_string(trace.condition) + " does not match regressor " +
                          to_string(regressor.condition()));
  }
  const std::size_t n = trace.size();
  const std::size_t window = regressor.window();
  const std::size_t first = std::max(static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n))), window);
  std::vector<ThrustTorque> predicted, truth;
  std::vector<double> rpm(window);
  for (std::size_t j = first; j < n; ++j) {
    for (std::size_t k = 0; k < window; ++k) rpm[k] = trace.samples[j - window + k].rpm;
    predicted.push_back(regressor.predict(rpm));
    truth.push_back({trace.samples[j].thrust, trace.samples[j].torque});
  }
  return mean_relative_error_pct(predicted, truth);
}

}  // namespace propfault::prop
