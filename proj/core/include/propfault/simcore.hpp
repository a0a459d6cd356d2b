#pragma once

#include <array>

#include <Eigen/Core>

namespace propfault::sim {

// Attitude (ZYX Euler), body angular rates, inertial position and velocity.
// Inertial frame is z-up; body frame is x-forward, y-left, z-up.
struct QuadState {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  double roll_rate = 0.0;   // body p
  double pitch_rate = 0.0;  // body q
  double yaw_rate = 0.0;    // body r
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double vz = 0.0;

  std::array<double, 12> to_array() const;
  static QuadState from_array(const std::array<double, 12>& v);
  Eigen::Vector3d position() const { return {x, y, z}; }
  Eigen::Vector3d velocity() const { return {vx, vy, vz}; }
  Eigen::Vector3d body_rates() const { return {roll_rate, pitch_rate, yaw_rate}; }
  bool finite() const;

  friend bool operator==(const QuadState&, const QuadState&) = default;
};

// Airframe constants. Defaults follow the reference airframe (mass of the
// training dataset, arm length, lift/drag constants and diagonal inertia).
struct QuadParams {
  double mass = 1.5;         // kg
  double arm_length = 0.16;  // m, centre to rotor
  double ixx = 0.0123;       // kg m^2
  double iyy = 0.0123;
  double izz = 0.0224;
  double k_f = 1.076e-5;    // N / RPM^2
  double k_tau = 1.632e-7;  // N m / RPM^2
  double gravity = 9.81;    // m / s^2
  double k_drag = 0.1;      // N s / m, linear translational drag

  // Throws InvalidArgument when a constant is non-positive (k_drag may be 0).
  void validate() const;
};

// Collective thrust along body z and body-axis torques.
struct BodyWrench {
  double total_thrust = 0.0;
  double tau_roll = 0.0;
  double tau_pitch = 0.0;
  double tau_yaw = 0.0;
};

// Body-to-inertial rotation, R = Rz(yaw) * Ry(pitch) * Rx(roll).
Eigen::Matrix3d rotation_matrix(double roll, double pitch, double yaw);

// Time derivative of every state field. Angle fields receive Euler-angle
// rates, rate fields receive body angular accelerations.
QuadState state_derivative(const QuadState& state, const BodyWrench& wrench, const QuadParams& params);

// Largest |pitch| tolerated before the Euler representation is considered to
// have failed.
inline constexpr double kMaxPitch = 85.0 * 3.14159265358979323846 / 180.0;

// One classical RK4 step with the wrench held constant. Requires
// 0 < dt <= 0.05. Angles of the result are wrapped to (-pi, pi]. Throws
// SimulationFault on non-finite state or |pitch| > 85 deg.
QuadState step_rk4(const QuadState& state, const BodyWrench& wrench, const QuadParams& params, double dt);

// Per-rotor speed at which four rotors carry the weight: 4 k_f w^2 = m g.
double hover_rpm(const QuadParams& params);

// Wraps to (-pi, pi].
double wrap_angle(double angle);

}  // namespace propfault::sim
