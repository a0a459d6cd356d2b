#pragma once

#include <array>

#include <Eigen/Core>

#include "propfault/simcore.hpp"

namespace propfault::ctrl {

// Cascaded PD gains and actuator limits.
struct ControllerGains {
  std::array<double, 3> kp_pos{1.2, 1.2, 2.0};  // 1/s^2
  std::array<double, 3> kd_pos{1.8, 1.8, 2.4};  // 1/s
  double max_position_error = 4.0;               // m, per-axis error clamp
  std::array<double, 3> kp_att{100.0, 100.0, 16.0};  // 1/s^2 (roll, pitch, yaw)
  std::array<double, 3> kd_att{20.0, 20.0, 8.0};     // 1/s
  double max_tilt = 0.5235987755982988;  // rad (30 deg)
  double rpm_min = 178.0;
  double rpm_max = 1200.0;
  double motor_tau = 0.02;  // s

  // Throws InvalidArgument on negative gains, rpm_min >= rpm_max,
  // max_tilt outside (0, 85 deg) or motor_tau <= 0.
  void validate() const;
};

struct MotorCommand {
  std::array<double, 4> rpm{};  // setpoints, within [rpm_min, rpm_max]
  std::array<double, 4> esc{};  // within [1000, 2000]
  bool saturated = false;       // some motor thrust was clamped
};

// Rotor layout (X configuration, d = L / sqrt(2), c = k_tau / k_f):
//   1 front-right (+d, -d) CCW    2 front-left (+d, +d) CW
//   3 rear-left   (-d, +d) CCW    4 rear-right (-d, -d) CW
// tau_roll  = d (-f1 + f2 + f3 - f4)
// tau_pitch = d (-f1 - f2 + f3 + f4)
// tau_yaw   = c (-f1 + f2 - f3 + f4)
inline constexpr std::array<double, 4> kRollSign{-1.0, 1.0, 1.0, -1.0};
inline constexpr std::array<double, 4> kPitchSign{-1.0, -1.0, 1.0, 1.0};
inline constexpr std::array<double, 4> kYawSign{-1.0, 1.0, -1.0, 1.0};

// Exact inverse of the allocation above.
std::array<double, 4> mixer(const sim::BodyWrench& wrench, const sim::QuadParams& params);

// Forward allocation from per-rotor thrusts and reaction-torque magnitudes.
sim::BodyWrench allocate(const std::array<double, 4>& thrust, const std::array<double, 4>& torque,
                         const sim::QuadParams& params);
// Same, with each torque taken as (k_tau / k_f) f_i.
sim::BodyWrench allocate(const std::array<double, 4>& thrust, const sim::QuadParams& params);

// Desired wrench of the cascade before allocation.
sim::BodyWrench desired_wrench(const sim::QuadState& state, const Eigen::Vector3d& target, const ControllerGains& gains,
                               const sim::QuadParams& params);

MotorCommand compute_motor_commands(const sim::QuadState& state, const Eigen::Vector3d& target,
                                    const ControllerGains& gains, const sim::QuadParams& params);

// First-order lag, exact discretization: rpm + (1 - exp(-dt/tau)) (cmd - rpm).
double motor_lag(double rpm_cmd, double rpm_now, double dt, double tau_m);

// Controller plus the four lagged motor speeds it drives.
class Controller {
 public:
  Controller(ControllerGains gains, sim::QuadParams params, double initial_rpm);

  // One control tick: new setpoints from the current state, then the motor
  // speeds advance by dt toward them.
  const MotorCommand& update(const sim::QuadState& state, const Eigen::Vector3d& target, double dt);

  const std::array<double, 4>& motor_rpm() const { return motor_rpm_; }
  const MotorCommand& last_command() const { return command_; }
  const ControllerGains& gains() const { return gains_; }

 private:
  ControllerGains gains_;
  sim::QuadParams params_;
  std::array<double, 4> motor_rpm_;
  MotorCommand command_;
};

}  // namespace propfault::ctrl
