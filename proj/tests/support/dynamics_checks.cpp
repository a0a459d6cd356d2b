#include "support/dynamics_checks.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "propfault/simcore.hpp"

namespace propfault::testing {

namespace {

sim::QuadParams asymmetric_body() {
  sim::QuadParams p;
  p.ixx = 0.0123;
  p.iyy = 0.0171;
  p.izz = 0.0224;
  return p;
}

sim::QuadState tumble_start() {
  sim::QuadState s;
  s.roll = 0.1;
  s.pitch = -0.05;
  s.yaw = 0.2;
  s.roll_rate = 1.5;
  s.pitch_rate = 0.4;
  s.yaw_rate = 2.0;
  s.vx = 0.5;
  return s;
}

Eigen::Matrix<double, 12, 1> integrate(double dt, double duration) {
  const sim::QuadParams p = asymmetric_body();
  const sim::BodyWrench w{10.0, 0.0, 0.0, 0.0};
  sim::QuadState s = tumble_start();
  const int steps = static_cast<int>(std::lround(duration / dt));
  for (int i = 0; i < steps; ++i) s = sim::step_rk4(s, w, p, dt);
  const auto a = s.to_array();
  return Eigen::Map<const Eigen::Matrix<double, 12, 1>>(a.data());
}

}  // namespace

double rk4_order_ratio() {
  const double dt = 0.04, duration = 0.8;
  const auto reference = integrate(dt / 16.0, duration);
  const double coarse = (integrate(dt, duration) - reference).norm();
  const double fine = (integrate(dt / 2.0, duration) - reference).norm();
  return std::log2(coarse / fine);
}

double angular_momentum_drift() {
  const sim::QuadParams p = asymmetric_body();
  const Eigen::Vector3d inertia(p.ixx, p.iyy, p.izz);
  sim::QuadState s = tumble_start();
  s.roll_rate = 0.3;
  s.pitch_rate = 0.2;
  s.yaw_rate = 0.5;
  const double l0 = inertia.cwiseProduct(s.body_rates()).norm();
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    s = sim::step_rk4(s, {}, p, 0.001);
    worst = std::max(worst, std::abs(inertia.cwiseProduct(s.body_rates()).norm() - l0) / l0);
  }
  return worst;
}

double hover_drift() {
  const sim::QuadParams p;
  sim::QuadState s;
  s.x = 1.0;
  s.y = -2.0;
  s.z = 5.0;
  const Eigen::Vector3d start = s.position();
  const sim::BodyWrench w{p.mass * p.gravity, 0.0, 0.0, 0.0};
  for (int i = 0; i < 1000; ++i) s = sim::step_rk4(s, w, p, 0.001);
  return (s.position() - start).norm();
}

}  // namespace propfault::testing
