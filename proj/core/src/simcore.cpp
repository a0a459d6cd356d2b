#include "propfault/simcore.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "propfault/error.hpp"

namespace propfault::sim {

std::array<double, 12> QuadState::to_array() const {
  return {roll, pitch, yaw, roll_rate, pitch_rate, yaw_rate, x, y, z, vx, vy, vz};
}

QuadState QuadState::from_array(const std::array<double, 12>& v) {
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]};
}

bool QuadState::finite() const {
  for (double v : to_array()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void QuadParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidArgument(std::string("airframe: ") + name + " must be positive and finite");
    }
  };
  positive(mass, "mass");
  positive(arm_length, "arm_length");
  positive(ixx, "ixx");
  positive(iyy, "iyy");
  positive(izz, "izz");
  positive(k_f, "k_f");
  positive(k_tau, "k_tau");
  positive(gravity, "gravity");
  if (!(k_drag >= 0.0) || !std::isfinite(k_drag)) throw InvalidArgument("airframe: k_drag must be >= 0");
}

double wrap_angle(double angle) {
  constexpr double pi = std::numbers::pi;
  if (angle > -pi && angle <= pi) return angle;
  double wrapped = std::fmod(angle + pi, 2.0 * pi);
  if (wrapped <= 0.0) wrapped += 2.0 * pi;
  return wrapped - pi;
}

Eigen::Matrix3d rotation_matrix(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  Eigen::Matrix3d r;
  r << cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
       sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
       -sp, cp * sr, cp * cr;
  return r;
}

QuadState state_derivative(const QuadState& s, const BodyWrench& w, const QuadParams& prm) {
  QuadState d;
  const double sr = std::sin(s.roll), cr = std::cos(s.roll);
  const double cp = std::cos(s.pitch), tp = std::tan(s.pitch);
  const double p = s.roll_rate, q = s.pitch_rate, r = s.yaw_rate;

  // Body rates to Euler-angle rates (ZYX).
  d.roll = p + (q * sr + r * cr) * tp;
  d.pitch = q * cr - r * sr;
  d.yaw = (q * sr + r * cr) / cp;

  // Euler's rotational equations for a diagonal inertia tensor.
  d.roll_rate = (w.tau_roll - (prm.izz - prm.iyy) * q * r) / prm.ixx;
  d.pitch_rate = (w.tau_pitch - (prm.ixx - prm.izz) * p * r) / prm.iyy;
  d.yaw_rate = (w.tau_yaw - (prm.iyy - prm.ixx) * p * q) / prm.izz;

  d.x = s.vx;
  d.y = s.vy;
  d.z = s.vz;

  // Thrust acts along the third column of R.
  const Eigen::Matrix3d rot = rotation_matrix(s.roll, s.pitch, s.yaw);
  const double thrust_per_mass = w.total_thrust / prm.mass;
  const double drag_per_mass = prm.k_drag / prm.mass;
  d.vx = rot(0, 2) * thrust_per_mass - drag_per_mass * s.vx;
  d.vy = rot(1, 2) * thrust_per_mass - drag_per_mass * s.vy;
  d.vz = rot(2, 2) * thrust_per_mass - prm.gravity - drag_per_mass * s.vz;
  return d;
}

namespace {

using Vec12 = std::array<double, 12>;

Vec12 axpy(const Vec12& base, double h, const Vec12& slope) {
  Vec12 out;
  for (std::size_t i = 0; i < 12; ++i) out[i] = base[i] + h * slope[i];
  return out;
}

void require_finite(const Vec12& v, const char* stage) {
  for (double x : v) {
    if (!std::isfinite(x)) throw SimulationFault(std::string("non-finite state in RK4 ") + stage);
  }
}

}  // namespace

QuadState step_rk4(const QuadState& state, const BodyWrench& wrench, const QuadParams& params, double dt) {
  if (!(dt > 0.0 && dt <= 0.05)) throw InvalidArgument("step_rk4: dt must lie in (0, 0.05]");
  auto f = [&](const Vec12& v) { return state_derivative(QuadState::from_array(v), wrench, params).to_array(); };

  const Vec12 y0 = state.to_array();
  const Vec12 k1 = f(y0);
  require_finite(k1, "stage 1");
  const Vec12 k2 = f(axpy(y0, 0.5 * dt, k1));
  require_finite(k2, "stage 2");
  const Vec12 k3 = f(axpy(y0, 0.5 * dt, k2));
  require_finite(k3, "stage 3");
  const Vec12 k4 = f(axpy(y0, dt, k3));
  require_finite(k4, "stage 4");

  Vec12 y1;
  for (std::size_t i = 0; i < 12; ++i) y1[i] = y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  require_finite(y1, "result");

  QuadState next = QuadState::from_array(y1);
  next.roll = wrap_angle(next.roll);
  next.pitch = wrap_angle(next.pitch);
  next.yaw = wrap_angle(next.yaw);
  if (std::abs(next.pitch) > kMaxPitch) {
    throw SimulationFault("pitch exceeded 85 deg; Euler attitude representation is singular");
  }
  return next;
}

double hover_rpm(const QuadParams& params) {
  return std::sqrt(params.mass * params.gravity / (4.0 * params.k_f));
}

}  // namespace propfault::sim
