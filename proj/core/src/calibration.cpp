#include "propfault/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "propfault/error.hpp"

namespace propfault::calib {

UnbalanceProfile UnbalanceProfile::identity(double omega_max) {
  UnbalanceProfile p;
  p.omega_max = omega_max;
  return p;
}

bool UnbalanceProfile::is_identity() const {
  return std::all_of(ratio.begin(), ratio.end(), [](double r) { return r == 1.0; });
}

void UnbalanceProfile::validate() const {
  if (ratio[0] != 1.0) throw InvalidArgument("unbalance profile: ratio of motor 1 must be exactly 1");
  for (double r : ratio) {
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("unbalance profile: ratios must be positive");
  }
  if (!(omega_max > 0.0) || !std::isfinite(omega_max)) throw InvalidArgument("unbalance profile: omega_max must be > 0");
}

FactorMode parse_factor_mode(const std::string& name) {
  if (name == "corrected") return FactorMode::Corrected;
  if (name == "verbatim") return FactorMode::Verbatim;
  throw InvalidArgument("unknown unbalance factor mode '" + name + "' (expected corrected or verbatim)");
}

std::string to_string(FactorMode mode) { return mode == FactorMode::Corrected ? "corrected" : "verbatim"; }

double unbalance_factor(double omega, const UnbalanceProfile& profile, std::size_t motor_index, FactorMode mode) {
  if (motor_index < 1 || motor_index > 4) throw InvalidArgument("unbalance_factor: motor index must be 1..4");
  if (!(omega >= 0.0)) throw InvalidArgument("unbalance_factor: negative rotor speed");
  const double u = profile.ratio[motor_index - 1];
  const double s = omega / profile.omega_max;
  return mode == FactorMode::Corrected ? 1.0 + s * (u - 1.0) : 1.0 + s * u;
}

prop::ThrustTorque adjusted_thrust_torque(double omega, double factor, double k_f, double k_tau) {
  if (!(factor > 0.0)) throw InvalidArgument("adjusted_thrust_torque: factor must be > 0");
  const prop::ThrustTorque base = prop::analytic_thrust_torque(omega, k_f, k_tau);
  const double scale = 1.0 / (factor * factor);
  return {base.thrust * scale, base.torque * scale};
}

UnbalanceProfile estimate_unbalance(std::span<const HoverSample> segment, double period, const HoverCriteria& criteria) {
  if (!(period > 0.0)) throw InvalidArgument("estimate_unbalance: period must be > 0");
  const double span = static_cast<double>(segment.size()) * period;
  if (span + 1e-9 < criteria.min_duration) {
    std::ostringstream msg;
    msg << "hover segment covers " << span << " s; at least " << criteria.min_duration << " s required";
    throw InvalidArgument(msg.str());
  }
  std::array<double, 4> sum{};
  double peak = 0.0;
  for (std::size_t k = 0; k < segment.size(); ++k) {
    const HoverSample& s = segment[k];
    if (!(s.speed < criteria.max_speed)) {
      std::ostringstream msg;
      msg << "sample " << k << " is not hovering: |v| = " << s.speed << " m/s (limit " << criteria.max_speed << ")";
      throw InvalidArgument(msg.str());
    }
    for (std::size_t i = 0; i < 4; ++i) {
      sum[i] += s.rpm[i];
      peak = std::max(peak, s.rpm[i]);
    }
  }
  if (!(sum[0] > 0.0)) throw InvalidArgument("estimate_unbalance: motor 1 never spins");
  UnbalanceProfile p;
  for (std::size_t i = 1; i < 4; ++i) p.ratio[i] = sum[i] / sum[0];
  p.omega_max = peak;
  return p;
}

SampleRange find_hover_segment(std::span<const HoverSample> samples, double period, const HoverCriteria& criteria) {
  SampleRange best;
  std::size_t start = 0;
  for (std::size_t k = 0; k <= samples.size(); ++k) {
    const bool hovering = k < samples.size() && samples[k].speed < criteria.max_speed;
    if (hovering) continue;
    if (k - start > best.end - best.begin) best = {start, k};
    start = k + 1;
  }
  const double span = static_cast<double>(best.end - best.begin) * period;
  if (span + 1e-9 < criteria.min_duration) {
    std::ostringstream msg;
    msg << "no hover segment of " << criteria.min_duration << " s with |v| < " << criteria.max_speed
        << " m/s (longest is " << span << " s)";
    throw InvalidArgument(msg.str());
  }
  return best;
}

}  // namespace propfault::calib
