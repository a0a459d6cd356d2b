#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "propfault/nn/checkpoint.hpp"
#include "propfault/nn/layers.hpp"
#include "propfault/nn/optim.hpp"

namespace propfault::prop {

enum class PropellerCondition { Normal, Bent, Cracked };

std::string to_string(PropellerCondition condition);
PropellerCondition parse_condition(const std::string& name);
// Single-letter code used in metadata files: N, B or C.
char condition_code(PropellerCondition condition);

struct ThrustTorque {
  double thrust = 0.0;  // N
  double torque = 0.0;  // N m
};

// Quadratic rotor law: thrust = k_f w^2, torque = k_tau w^2. Rejects w < 0.
ThrustTorque analytic_thrust_torque(double omega, double k_f, double k_tau);

// ---------------------------------------------------------------------------
// ESC command <-> RPM, from the bench calibration
// RPM = -0.0062 ESC^2 + 29.37 ESC - 22992 on ESC in [1000, 2000].

inline constexpr double kEscMin = 1000.0;
inline constexpr double kEscMax = 2000.0;

double esc_to_rpm(double esc);
// Inverse on the increasing branch; rpm is clamped to [esc_to_rpm(1000),
// esc_to_rpm(2000)] first, so the result always lies in [1000, 2000].
double rpm_to_esc(double rpm);

// ---------------------------------------------------------------------------
// Synthetic bench data.

// Thrust/torque efficiency curves and bench-run settings.
//   Normal : eta = 1
//   Bent   : eta_f = 1 - bent_thrust_loss * s,     eta_tau = 1 - bent_torque_loss * s
//   Cracked: eta_f = 1 - cracked_thrust_loss * s^2, eta_tau = 1 - cracked_torque_loss * s^2
// with s = min(w / omega_max, 1).
struct DegradationConfig {
  double k_f = 1.076e-5;
  double k_tau = 1.632e-7;
  double omega_max = 1200.0;  // RPM where the degradation reaches full depth
  double bent_thrust_loss = 0.12;
  double bent_torque_loss = 0.06;
  double cracked_thrust_loss = 0.18;
  double cracked_torque_loss = 0.09;
  double thrust_noise = 0.01;     // N, std-dev of additive noise
  double torque_noise = 1.5e-4;   // N m
  double duration = 300.0;        // s
  double period = 0.025;          // s
  double ramp_period = 120.0;     // s, one 1000 -> 2000 -> 1000 sweep

  void validate() const;
};

double thrust_efficiency(PropellerCondition condition, double omega, const DegradationConfig& cfg);
double torque_efficiency(PropellerCondition condition, double omega, const DegradationConfig& cfg);
// Noise-free output of a rotor in the given condition.
ThrustTorque degraded_thrust_torque(PropellerCondition condition, double omega, const DegradationConfig& cfg);

struct LoadcellSample {
  double t = 0.0;
  double esc = 0.0;
  double rpm = 0.0;
  double thrust = 0.0;
  double torque = 0.0;
};

struct LoadcellTrace {
  PropellerCondition condition = PropellerCondition::Normal;
  double period = 0.025;
  std::vector<LoadcellSample> samples;

  std::size_t size() const { return samples.size(); }
};

// Triangular ESC sweep between 1000 and 2000, degraded quadratic outputs plus
// Gaussian noise (clamped at zero). Deterministic in (condition, cfg, seed).
LoadcellTrace synth_loadcell_trace(PropellerCondition condition, const DegradationConfig& cfg, std::uint64_t seed);

// CSV with header t,esc,rpm,thrust,torque.
void write_loadcell_csv(const LoadcellTrace& trace, const std::filesystem::path& path);
LoadcellTrace read_loadcell_csv(const std::filesystem::path& path, PropellerCondition condition);

// ---------------------------------------------------------------------------
// Sliding-window reconstruction: window i holds inputs[i, i+L) and is paired
// with targets[i+L].

struct WindowedSeries {
  std::size_t count = 0;
  std::size_t window = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> inputs;   // count x window x in_dim
  std::vector<double> targets;  // count x out_dim
};

WindowedSeries make_windows(std::span<const double> inputs, std::size_t in_dim, std::span<const double> targets,
                            std::size_t out_dim, std::size_t window);

// ---------------------------------------------------------------------------
// Stacked-LSTM regressor: LSTM (sequence) -> LSTM (last step) -> dense ->
// dense(2), mapping an RPM window to next-sample (thrust, torque).

struct RegressorConfig {
  std::size_t window = 10;
  std::size_t lstm1_units = 16;
  std::size_t lstm2_units = 16;
  std::size_t dense_units = 16;
  std::size_t batch_size = 32;
  nn::OptimizerConfig optimizer{};
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double min_delta = 1e-8;
  double train_fraction = 0.8;
  double validation_fraction = 0.1;

  void validate() const;
};

// Log-then-min-max scaling constants taken from the training segment.
struct RegressorScaling {
  double log_rpm_min = 0.0, log_rpm_max = 1.0;
  double log_thrust_min = 0.0, log_thrust_max = 1.0;
  double log_torque_min = 0.0, log_torque_max = 1.0;
};

struct RegressorTrainingReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_validation_mse = 0.0;
  std::vector<double> train_mse;
  std::vector<double> validation_mse;
};

class PropellerRegressor {
 public:
  PropellerRegressor() = default;
  PropellerRegressor(PropellerCondition condition, const RegressorConfig& cfg, std::uint64_t seed);

  PropellerCondition condition() const { return condition_; }
  std::size_t window() const { return window_; }
  double sample_period() const { return sample_period_; }
  const RegressorScaling& scaling() const { return scaling_; }

  // Thrust and torque in physical units for a window of exactly window()
  // RPM values (oldest first). Pure; outputs are non-negative.
  ThrustTorque predict(std::span<const double> rpm_window) const;

  nn::Checkpoint to_checkpoint() const;
  static PropellerRegressor from_checkpoint(const nn::Checkpoint& checkpoint);
  void save(const std::filesystem::path& path) const;
  static PropellerRegressor load(const std::filesystem::path& path);

  friend PropellerRegressor train_regressor(const LoadcellTrace& trace, const RegressorConfig& cfg,
                                            std::uint64_t seed, RegressorTrainingReport* report);

  // Exposed for gradient checking: normalized forward and backward on one
  // window. backward accumulates parameter gradients and returns the loss.
  std::vector<double> forward_normalized(std::span<const double> normalized_window) const;
  double accumulate_gradients(std::span<const double> normalized_window, std::span<const double> normalized_target);
  // Minibatch form: windows is batch x L, targets batch x 2. Accumulates the
  // gradient of the batch-mean loss and returns that mean.
  double accumulate_batch(std::span<const double> windows, std::span<const double> targets, std::size_t batch);
  std::vector<nn::Param> parameters();
  void zero_grad();

 private:
  PropellerCondition condition_ = PropellerCondition::Normal;
  std::size_t window_ = 0;
  double sample_period_ = 0.025;
  RegressorScaling scaling_;
  nn::LstmLayer lstm1_;
  nn::LstmLayer lstm2_;
  nn::Dense dense1_;
  nn::Dense dense2_;
};

// Trains on the first train_fraction of the trace with MSE on scaled
// targets; stops when validation MSE has not improved by min_delta for
// `patience` epochs and returns the best-validation weights. Throws
// TrainingDiverged on a non-finite loss.
PropellerRegressor train_regressor(const LoadcellTrace& trace, const RegressorConfig& cfg, std::uint64_t seed,
                                   RegressorTrainingReport* report = nullptr);

struct ErrorPct {
  double thrust = 0.0;
  double torque = 0.0;
};

// Mean absolute relative error in percent, thrust and torque separately.
// Samples whose truth is not positive are skipped.
ErrorPct mean_relative_error_pct(std::span<const ThrustTorque> predicted, std::span<const ThrustTorque> truth);

// Held-out error on the samples after the first train_fraction of the trace.
ErrorPct eval_error(const PropellerRegressor& regressor, const LoadcellTrace& trace, double train_fraction = 0.8);

// ---------------------------------------------------------------------------
// Rotor models as consumed by the flight simulator. A model is fed a window
// of RPM history, sampled every sample_period() seconds, oldest first.

class PropellerModel {
 public:
  virtual ~PropellerModel() = default;
  virtual PropellerCondition condition() const = 0;
  virtual std::size_t window() const = 0;
  virtual double sample_period() const = 0;
  virtual ThrustTorque evaluate(std::span<const double> rpm_window) const = 0;
};

// Closed-form degraded quadratic on the latest RPM.
class AnalyticPropeller final : public PropellerModel {
 public:
  AnalyticPropeller(PropellerCondition condition, DegradationConfig cfg)
      : condition_(condition), cfg_(cfg) {}
  PropellerCondition condition() const override { return condition_; }
  std::size_t window() const override { return 1; }
  double sample_period() const override { return cfg_.period; }
  ThrustTorque evaluate(std::span<const double> rpm_window) const override;

 private:
  PropellerCondition condition_;
  DegradationConfig cfg_;
};

class LearnedPropeller final : public PropellerModel {
 public:
  explicit LearnedPropeller(std::shared_ptr<const PropellerRegressor> regressor)
      : regressor_(std::move(regressor)) {}
  PropellerCondition condition() const override { return regressor_->condition(); }
  std::size_t window() const override { return regressor_->window(); }
  double sample_period() const override { return regressor_->sample_period(); }
  ThrustTorque evaluate(std::span<const double> rpm_window) const override { return regressor_->predict(rpm_window); }

 private:
  std::shared_ptr<const PropellerRegressor> regressor_;
};

}  // namespace propfault::prop
