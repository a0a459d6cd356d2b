#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>

#include "propfault/propeller.hpp"

namespace propfault::calib {

// Per-motor mean-RPM ratios relative to motor 1, plus the speed used to
// normalize them. ratio[0] is always exactly 1.
struct UnbalanceProfile {
  std::array<double, 4> ratio{1.0, 1.0, 1.0, 1.0};
  double omega_max = 1200.0;  // RPM

  static UnbalanceProfile identity(double omega_max = 1200.0);
  bool is_identity() const;
  void validate() const;

  friend bool operator==(const UnbalanceProfile&, const UnbalanceProfile&) = default;
};

enum class FactorMode {
  Corrected,  // 1 + (w / w_max) (U - 1); a balanced motor always gives 1
  Verbatim,   // 1 + (w / w_max) U, as the formula is usually printed
};

FactorMode parse_factor_mode(const std::string& name);
std::string to_string(FactorMode mode);

// motor_index is 1-based.
double unbalance_factor(double omega, const UnbalanceProfile& profile, std::size_t motor_index,
                        FactorMode mode = FactorMode::Corrected);

// F = k_f w^2 / factor^2, tau = k_tau w^2 / factor^2.
prop::ThrustTorque adjusted_thrust_torque(double omega, double factor, double k_f, double k_tau);

// Minimal view of a hover record: four motor speeds and the speed norm.
struct HoverSample {
  std::array<double, 4> rpm{};
  double speed = 0.0;  // |v|, m/s
};

struct HoverCriteria {
  double max_speed = 0.1;     // m/s
  double min_duration = 10.0; // s
};

// Ratios of mean motor RPM over the samples. Every sample must satisfy the
// speed bound and the span must cover min_duration at the given period.
UnbalanceProfile estimate_unbalance(std::span<const HoverSample> segment, double period,
                                    const HoverCriteria& criteria = {});

struct SampleRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

// Longest run of consecutive samples under max_speed. Throws InvalidArgument
// when no run lasts min_duration.
SampleRange find_hover_segment(std::span<const HoverSample> samples, double period, const HoverCriteria& criteria = {});

}  // namespace propfault::calib
