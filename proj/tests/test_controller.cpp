#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "propfault/controller.hpp"
#include "propfault/datagen.hpp"
#include "propfault/error.hpp"
#include "propfault/propeller.hpp"

using namespace propfault;
using ctrl::ControllerGains;
using sim::QuadParams;
using sim::QuadState;

TEST(MotorCommands, EquilibriumGivesHoverRpm) {
  const QuadParams p;
  const QuadState s{.x = 1.0, .y = 2.0, .z = 3.0};
  const auto cmd = ctrl::compute_motor_commands(s, s.position(), ControllerGains{}, p);
  for (double rpm : cmd.rpm) EXPECT_NEAR(rpm, sim::hover_rpm(p), 1e-9);
  EXPECT_FALSE(cmd.saturated);
}

TEST(MotorCommands, ClimbRaisesAllMotorsEqually) {
  const QuadParams p;
  const QuadState s{.z = 3.0};
  const auto cmd = ctrl::compute_motor_commands(s, {0.0, 0.0, 5.0}, ControllerGains{}, p);
  for (double rpm : cmd.rpm) {
    EXPECT_NEAR(rpm, cmd.rpm[0], 1e-9);
    EXPECT_GT(rpm, sim::hover_rpm(p));
  }
}

TEST(MotorCommands, ForwardTargetPitchesNoseDown) {
  const QuadParams p;
  const QuadState s{.z = 3.0};
  const ControllerGains g;
  const Eigen::Vector3d target{2.0, 0.0, 3.0};
  const auto wrench = ctrl::desired_wrench(s, target, g, p);
  EXPECT_GT(wrench.tau_pitch, 0.0);
  EXPECT_NEAR(wrench.tau_roll, 0.0, 1e-12);
  EXPECT_NEAR(wrench.tau_yaw, 0.0, 1e-12);
  const auto cmd = ctrl::compute_motor_commands(s, target, g, p);
  // Rear pair (3, 4) speeds up against the front pair (1, 2).
  EXPECT_GT(cmd.rpm[2] + cmd.rpm[3], cmd.rpm[0] + cmd.rpm[1]);
  EXPECT_NEAR(cmd.rpm[0], cmd.rpm[1], 1e-9);
  EXPECT_NEAR(cmd.rpm[2], cmd.rpm[3], 1e-9);
}

TEST(MotorCommands, OutputsStayWithinLimits) {
  const QuadParams p;
  const ControllerGains g;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  bool any_saturated = false;
  for (int i = 0; i < 1000; ++i) {
    QuadState s{.roll = 0.5 * u(rng), .pitch = 0.5 * u(rng), .yaw = 3.0 * u(rng),
                .roll_rate = 4 * u(rng), .pitch_rate = 4 * u(rng), .yaw_rate = 4 * u(rng),
                .x = 10 * u(rng), .y = 10 * u(rng), .z = 5 + 5 * u(rng),
                .vx = 5 * u(rng), .vy = 5 * u(rng), .vz = 5 * u(rng)};
    const auto cmd = ctrl::compute_motor_commands(s, {10 * u(rng), 10 * u(rng), 6 + 4 * u(rng)}, g, p);
    any_saturated = any_saturated || cmd.saturated;
    for (std::size_t m = 0; m < 4; ++m) {
      EXPECT_GE(cmd.rpm[m], g.rpm_min);
      EXPECT_LE(cmd.rpm[m], g.rpm_max);
      EXPECT_GE(cmd.esc[m], 1000.0);
      EXPECT_LE(cmd.esc[m], 2000.0);
    }
  }
  EXPECT_TRUE(any_saturated);
}

TEST(Mixer, PureThrustSplitsEvenly) {
  const QuadParams p;
  for (double f : ctrl::mixer({8.0, 0.0, 0.0, 0.0}, p)) EXPECT_NEAR(f, 2.0, 1e-15);
}

TEST(Mixer, PureYawAlternatesByRotation) {
  const QuadParams p;
  const double tau = 0.01;
  const auto f = ctrl::mixer({0.0, 0.0, 0.0, tau}, p);
  const double expect = tau * p.k_f / (4.0 * p.k_tau);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(f[i], ctrl::kYawSign[i] * expect, 1e-12);
  EXPECT_NEAR(f[0] + f[1] + f[2] + f[3], 0.0, 1e-15);
}

TEST(Mixer, RoundTripsRandomWrenches) {
  const QuadParams p;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> thrust(0.0, 40.0), torque(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const sim::BodyWrench w{thrust(rng), torque(rng), torque(rng), 0.05 * torque(rng)};
    const sim::BodyWrench back = ctrl::allocate(ctrl::mixer(w, p), p);
    const double err = std::hypot(back.total_thrust - w.total_thrust, back.tau_roll - w.tau_roll,
                                  back.tau_pitch - w.tau_pitch) +
                       std::abs(back.tau_yaw - w.tau_yaw);
    EXPECT_LT(err, 1e-10);
  }
}

TEST(MotorLag, FixedPointAndTimeConstant) {
  EXPECT_DOUBLE_EQ(ctrl::motor_lag(500.0, 500.0, 0.01, 0.02), 500.0);
  EXPECT_NEAR(ctrl::motor_lag(1.0, 0.0, 0.02, 0.02), 1.0 - std::exp(-1.0), 1e-15);
  EXPECT_NEAR(ctrl::motor_lag(1.0, 0.0, 0.02, 0.02), 0.632, 5e-4);
  EXPECT_THROW(ctrl::motor_lag(1.0, 0.0, 0.01, 0.0), InvalidArgument);
}

TEST(MotorLag, MonotoneWithoutOvershoot) {
  double rpm = 200.0;
  for (int i = 0; i < 200; ++i) {
    const double next = ctrl::motor_lag(900.0, rpm, 0.015, 0.02);
    EXPECT_GT(next, rpm - 1e-12);
    EXPECT_LE(next, 900.0);
    rpm = next;
  }
}

TEST(Gains, Validation) {
  ControllerGains g;
  EXPECT_NO_THROW(g.validate());
  g.rpm_min = g.rpm_max;
  EXPECT_THROW(g.validate(), InvalidArgument);
  g = ControllerGains{};
  g.max_tilt = 1.5;
  EXPECT_THROW(g.validate(), InvalidArgument);
  g = ControllerGains{};
  g.kp_att[1] = -1.0;
  EXPECT_THROW(g.validate(), InvalidArgument);
}

namespace {

data::MissionSetup normal_setup(data::Waypoints waypoints, double duration) {
  data::MissionSetup setup;
  setup.waypoints = std::move(waypoints);
  setup.mission.duration = duration;
  return setup;
}

}  // namespace

TEST(ClosedLoop, VisitsEveryWaypoint) {
  const auto bank = data::ModelBank::analytic(prop::DegradationConfig{});
  const auto setup = normal_setup(data::waypoint_set("A"), 80.0);
  const auto log = data::run_mission(data::FaultScenario{}, setup, bank, 1);
  ASSERT_FALSE(log.truncated);
  ASSERT_EQ(log.waypoint_visits.size(), 5u);
  for (std::size_t v : log.waypoint_visits) EXPECT_GE(v, 1u);
}

TEST(ClosedLoop, HoldsHoverWithinFiveCentimetres) {
  const auto bank = data::ModelBank::analytic(prop::DegradationConfig{});
  const Eigen::Vector3d point{0.0, 0.0, 2.0};
  const auto log = data::run_mission(data::FaultScenario{}, normal_setup({point}, 30.0), bank, 1);
  ASSERT_EQ(log.records.size(), 600u);
  double worst = 0.0;
  for (const auto& r : log.records) worst = std::max(worst, (Eigen::Vector3d{r.x, r.y, r.z} - point).norm());
  EXPECT_LT(worst, 0.05);
}
