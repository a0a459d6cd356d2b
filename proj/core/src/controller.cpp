#include "propfault/controller.hpp"

#include <algorithm>
#include <cmath>

#include "propfault/error.hpp"
#include "propfault/propeller.hpp"

namespace propfault::ctrl {

void ControllerGains::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(kp_pos[i] >= 0.0) || !(kd_pos[i] >= 0.0) || !(kp_att[i] >= 0.0) || !(kd_att[i] >= 0.0)) {
      throw InvalidArgument("controller gains must be >= 0");
    }
  }
  if (!(max_position_error > 0.0)) throw InvalidArgument("controller: max_position_error must be > 0");
  if (!(max_tilt > 0.0 && max_tilt < sim::kMaxPitch)) throw InvalidArgument("controller: max_tilt must lie in (0, 85 deg)");
  if (!(rpm_min >= 0.0 && rpm_min < rpm_max)) throw InvalidArgument("controller: need 0 <= rpm_min < rpm_max");
  if (!(motor_tau > 0.0)) throw InvalidArgument("controller: motor_tau must be > 0");
}

namespace {
double arm(const sim::QuadParams& p) { return p.arm_length / std::sqrt(2.0); }
}  // namespace

std::array<double, 4> mixer(const sim::BodyWrench& w, const sim::QuadParams& p) {
  const double d = arm(p);
  const double c = p.k_tau / p.k_f;
  std::array<double, 4> f{};
  for (std::size_t i = 0; i < 4; ++i) {
    f[i] = w.total_thrust / 4.0 + kRollSign[i] * w.tau_roll / (4.0 * d) + kPitchSign[i] * w.tau_pitch / (4.0 * d) +
           kYawSign[i] * w.tau_yaw / (4.0 * c);
  }
  return f;
}

sim::BodyWrench allocate(const std::array<double, 4>& thrust, const std::array<double, 4>& torque,
                         const sim::QuadParams& p) {
  const double d = arm(p);
  sim::BodyWrench w;
  for (std::size_t i = 0; i < 4; ++i) {
    w.total_thrust += thrust[i];
    w.tau_roll += d * kRollSign[i] * thrust[i];
    w.tau_pitch += d * kPitchSign[i] * thrust[i];
    w.tau_yaw += kYawSign[i] * torque[i];
  }
  return w;
}

sim::BodyWrench allocate(const std::array<double, 4>& thrust, const sim::QuadParams& p) {
  const double c = p.k_tau / p.k_f;
  std::array<double, 4> torque{};
  for (std::size_t i = 0; i < 4; ++i) torque[i] = c * thrust[i];
  return allocate(thrust, torque, p);
}

sim::BodyWrench desired_wrench(const sim::QuadState& s, const Eigen::Vector3d& target, const ControllerGains& g,
                               const sim::QuadParams& p) {
  // Outer loop: saturated position error to desired inertial acceleration.
  Eigen::Vector3d acc;
  const Eigen::Vector3d err = target - s.position();
  const Eigen::Vector3d vel = s.velocity();
  for (int a = 0; a < 3; ++a) {
    const double e = std::clamp(err[a], -g.max_position_error, g.max_position_error);
    acc[a] = g.kp_pos[a] * e - g.kd_pos[a] * vel[a] + p.k_drag / p.mass * vel[a];
  }
  const double lift = std::max(acc.z() + p.gravity, 0.1 * p.gravity);

  // Small-angle inversion of R e3 for yaw-rotated accelerations.
  const double cy = std::cos(s.yaw), sy = std::sin(s.yaw);
  const double pitch_d = std::clamp(std::atan((acc.x() * cy + acc.y() * sy) / lift), -g.max_tilt, g.max_tilt);
  const double roll_d =
      std::clamp(std::atan((acc.x() * sy - acc.y() * cy) * std::cos(pitch_d) / lift), -g.max_tilt, g.max_tilt);
  const double yaw_d = 0.0;

  sim::BodyWrench w;
  w.total_thrust = p.mass * lift / (std::cos(s.roll) * std::cos(s.pitch));

  // Inner loop: attitude PD scaled by inertia.
  const double e_roll = sim::wrap_angle(roll_d - s.roll);
  const double e_pitch = sim::wrap_angle(pitch_d - s.pitch);
  const double e_yaw = sim::wrap_angle(yaw_d - s.yaw);
  w.tau_roll = p.ixx * (g.kp_att[0] * e_roll - g.kd_att[0] * s.roll_rate);
  w.tau_pitch = p.iyy * (g.kp_att[1] * e_pitch - g.kd_att[1] * s.pitch_rate);
  w.tau_yaw = p.izz * (g.kp_att[2] * e_yaw - g.kd_att[2] * s.yaw_rate);
  return w;
}

MotorCommand compute_motor_commands(const sim::QuadState& state, const Eigen::Vector3d& target,
                                    const ControllerGains& gains, const sim::QuadParams& params) {
  const std::array<double, 4> f = mixer(desired_wrench(state, target, gains, params), params);
  const double f_min = params.k_f * gains.rpm_min * gains.rpm_min;
  const double f_max = params.k_f * gains.rpm_max * gains.rpm_max;
  MotorCommand cmd;
  for (std::size_t i = 0; i < 4; ++i) {
    const double fi = std::clamp(f[i], f_min, f_max);
    if (fi != f[i]) cmd.saturated = true;
    cmd.rpm[i] = std::clamp(std::sqrt(fi / params.k_f), gains.rpm_min, gains.rpm_max);
    cmd.esc[i] = prop::rpm_to_esc(cmd.rpm[i]);
  }
  return cmd;
}

double motor_lag(double rpm_cmd, double rpm_now, double dt, double tau_m) {
  if (!(tau_m > 0.0)) throw InvalidArgument("motor_lag: tau_m must be > 0");
  return rpm_now + (1.0 - std::exp(-dt / tau_m)) * (rpm_cmd - rpm_now);
}

Controller::Controller(ControllerGains gains, sim::QuadParams params, double initial_rpm)
    : gains_(gains), params_(params) {
  gains_.validate();
  params_.validate();
  motor_rpm_.fill(initial_rpm);
}

const MotorCommand& Controller::update(const sim::QuadState& state, const Eigen::Vector3d& target, double dt) {
  command_ = compute_motor_commands(state, target, gains_, params_);
  for (std::size_t i = 0; i < 4; ++i) motor_rpm_[i] = motor_lag(command_.rpm[i], motor_rpm_[i], dt, gains_.motor_tau);
  return command_;
}

}  // namespace propfault::ctrl
