#include <vector>

#include <gtest/gtest.h>

#include "gridmpc/thermal.hpp"

using namespace gridmpc;

TEST(TempStep, TableValuesAtRest) {
  const ThermalParams th;
  EXPECT_NEAR(temp_step(th, 35.0, 0.0, 0.0, 35.0), 35.0126, 1e-10);
  EXPECT_NEAR(temp_step(th, 35.0, 1.0, 0.0, 35.0), 35.0367, 1e-10);
}

TEST(TempStep, IdentityDynamics) {
  ThermalParams th;
  th.a = 1.0;
  th.b = th.c = th.d = 0.0;
  EXPECT_EQ(temp_step(th, 42.5, 0.0, 0.0, 35.0), 42.5);
}

TEST(TempStep, ContractionMonotonicityAndSignIndependence) {
  const ThermalParams th;
  const double t1 = 40.0, t2 = 51.0;
  EXPECT_NEAR(std::abs(temp_step(th, t1, 0.7, 0.2, 30) - temp_step(th, t2, 0.7, 0.2, 30)),
              th.a * std::abs(t1 - t2), 1e-12);
  EXPECT_LE(temp_step(th, 40, 0.5, 0.1, 35), temp_step(th, 40, 0.6, 0.1, 35));
  EXPECT_LE(temp_step(th, 40, 0.5, 0.1, 35), temp_step(th, 40, 0.5, 0.2, 35));
  EXPECT_LE(temp_step(th, 40, 0.5, 0.1, 35), temp_step(th, 41, 0.5, 0.1, 35));
  EXPECT_LE(temp_step(th, 40, 0.5, 0.1, 35), temp_step(th, 40, 0.5, 0.1, 36));
  EXPECT_EQ(temp_step(th, 40, 0.5, -0.1, 35), temp_step(th, 40, -0.5, 0.1, 35));
}

TEST(SteadyStateFlow, ClosedFormAndIteration) {
  const ThermalParams th;
  const double s = steady_state_flow(th, 56.0, 35.0);
  EXPECT_NEAR(s, 1.3846, 1e-3);
  double t = 35.0;
  for (int k = 0; k < 10000; ++k) t = temp_step(th, t, s, 0.0, 35.0);
  EXPECT_LT(std::abs(t - 56.0), 0.01);
}

TEST(SteadyStateFlow, ZeroLoadEquilibriumAndBelow) {
  const ThermalParams th;
  const double eq = zero_load_equilibrium(th, 35.0);
  EXPECT_NEAR(eq, (0.0175 + 0.0931) / 0.0028, 1e-9);
  EXPECT_NEAR(steady_state_flow(th, eq, 35.0), 0.0, 1e-6);
  EXPECT_THROW(steady_state_flow(th, eq - 1.0, 35.0), DomainError);
}

TEST(SimulateTemperature, Basics) {
  const ThermalParams th;
  EXPECT_EQ(simulate_temperature(th, 35.0, {}, {}), std::vector<double>{35.0});
  const std::vector<FlowMva> flows(2);
  const std::vector<double> amb(1, 35.0);
  EXPECT_THROW(simulate_temperature(th, 35.0, flows, amb), DomainError);
}

TEST(SimulateTemperature, ConvergesToSteadyState) {
  const ThermalParams th;
  const double s = steady_state_flow(th, 56.0, 35.0);
  const std::vector<FlowMva> flows(10000, FlowMva{s, 0.0});
  const std::vector<double> amb(10000, 35.0);
  const auto traj = simulate_temperature(th, 35.0, flows, amb);
  ASSERT_EQ(traj.size(), 10001u);
  EXPECT_LT(std::abs(traj.back() - 56.0), 0.01);
}

TEST(SimulateTemperature, ZeroFlowApproachIsMonotone) {
  const ThermalParams th;
  const std::vector<FlowMva> flows(5000);
  const std::vector<double> amb(5000, 35.0);
  const auto traj = simulate_temperature(th, 35.0, flows, amb);
  for (std::size_t k = 1; k < traj.size(); ++k) ASSERT_GE(traj[k], traj[k - 1]);
  EXPECT_NEAR(traj.back(), 39.5, 0.05);
}

TEST(ThermalParams, Validation) {
  ThermalParams th;
  EXPECT_NO_THROW(th.validate());
  th.a = 1.0;
  EXPECT_THROW(th.validate(), ConfigError);
  th = {};
  th.d = 0.0;
  EXPECT_THROW(th.validate(), ConfigError);
  const ThermalParams back = thermal_from_json(to_json(ThermalParams{}));
  EXPECT_EQ(back.b, 0.0241);
  EXPECT_EQ(back.t_max, 56.0);
}
