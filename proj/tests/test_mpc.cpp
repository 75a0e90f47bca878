#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "gridmpc/conic/dense_solver.hpp"
#include "gridmpc/conic/hsde_solver.hpp"
#include "gridmpc/conic/kkt.hpp"
#include "gridmpc/mpc.hpp"
#include "gridmpc/scenario.hpp"
#include "support.hpp"

using namespace gridmpc;

namespace {

// One load node with PV; r, x in p.u. on 2.5 MVA.
struct OneNode {
  FeederModel model = test::chain({0.01}, {0.0075}, {InverterSpec{1.0}});
  ThermalParams thermal;
  double p_g = 0.9, p_c = 0.02, q_c = 0.01;

  HorizonInputs inputs(std::size_t horizon, double t0) const {
    HorizonInputs in;
    for (std::size_t h = 0; h < horizon; ++h) {
      StepData st;
      st.p_c = Vector::Constant(1, p_c);
      st.q_c = Vector::Constant(1, q_c);
      st.p_g = Vector::Constant(1, p_g);
      in.steps.push_back(st);
    }
    in.t_initial = t0;
    return in;
  }
};

ControlPlan solve(const MpcProblem& mp, const conic::ConicBackend& backend = conic::HsdeSolver()) {
  return extract_plan(mp, backend.solve(mp.conic, mp.config.tolerances));
}

}  // namespace

TEST(MpcProblem, VariableCount) {
  EXPECT_EQ(mpc_variable_count(1, 1), 9u);
  for (std::size_t n : {1u, 3u, 6u})
    for (std::size_t h : {1u, 4u, 30u}) EXPECT_EQ(mpc_variable_count(n, h), (5 * n + 4) * h);
  OneNode c;
  MpcConfig cfg;
  cfg.horizon = 4;
  const MpcProblem mp = build_problem(c.model, c.thermal, cfg, c.inputs(4, 35.0));
  EXPECT_EQ(static_cast<std::size_t>(mp.conic.num_vars()), mpc_variable_count(1, 4));
  EXPECT_EQ(mp.rows.thermal_eq.size(), 4u);
  EXPECT_EQ(mp.rows.relaxation_cone.size(), 4u);
}

TEST(MpcProblem, RejectsBadInputs) {
  OneNode c;
  MpcConfig cfg;
  EXPECT_THROW(build_problem(c.model, c.thermal, cfg, HorizonInputs{}), DomainError);
  HorizonInputs in = c.inputs(1, 35.0);
  in.t_initial = std::nan("");
  EXPECT_THROW(build_problem(c.model, c.thermal, cfg, in), DomainError);
  in = c.inputs(1, 35.0);
  in.steps[0].p_g = Vector::Zero(2);
  EXPECT_THROW(build_problem(c.model, c.thermal, cfg, in), DomainError);
  cfg.beta = -1.0;
  EXPECT_THROW(build_problem(c.model, c.thermal, cfg, c.inputs(1, 35.0)), ConfigError);
}

TEST(MpcProblem, NoPvMeansNoControl) {
  OneNode c;
  c.p_g = 0.0;
  MpcConfig cfg;
  const ControlPlan plan = solve(build_problem(c.model, c.thermal, cfg, c.inputs(1, 35.0)));
  EXPECT_NEAR(plan.p_cr[0][0], 0.0, 1e-7);
  EXPECT_NEAR(plan.q_g[0][0], 0.0, 1e-6);
}

TEST(MpcProblem, NoBindingConstraintsMeansNoControl) {
  OneNode c;
  c.p_g = 0.3;
  MpcConfig cfg;
  cfg.horizon = 3;
  const ControlPlan plan = solve(build_problem(c.model, c.thermal, cfg, c.inputs(3, 35.0)));
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_NEAR(plan.p_cr[h][0], 0.0, 1e-6);
    EXPECT_NEAR(plan.q_g[h][0], 0.0, 1e-5);
  }
}

TEST(MpcProblem, LargestReachableRelaxationVariable) {
  // Maximising e(0) alone: the thermal equality plus T(1) <= T_max cap it at
  // (T_max - a T0 - c T_a - d) / b.
  OneNode c;
  MpcConfig cfg;
  MpcProblem mp = build_problem(c.model, c.thermal, cfg, c.inputs(1, 35.0));
  mp.conic.quad.setZero();
  mp.conic.linear.setZero();
  mp.conic.linear[mp.layout.e(0)] = -1.0;
  const conic::ConicSolution s = conic::HsdeSolver().solve(mp.conic, cfg.tolerances);
  ASSERT_EQ(s.status, conic::SolveStatus::Optimal);
  const double headroom = 56.0 - 0.9972 * 35.0 - 0.0005 * 35.0 - 0.0931;
  EXPECT_NEAR(headroom, 20.9874, 1e-9);
  EXPECT_NEAR(s.x[mp.layout.e(0)], headroom / 0.0241, 1e-4);
  EXPECT_NEAR(s.x[mp.layout.temp_next(0)], 56.0, 1e-6);
}

TEST(MpcProblem, HotStartIsInfeasible) {
  OneNode c;
  MpcConfig cfg;
  const MpcProblem mp = build_problem(c.model, c.thermal, cfg, c.inputs(1, 60.0));
  ASSERT_FALSE(mp.warnings.empty());
  const conic::ConicSolution s = conic::HsdeSolver().solve(mp.conic, cfg.tolerances);
  EXPECT_EQ(s.status, conic::SolveStatus::Infeasible);
  try {
    extract_plan(mp, s);
    FAIL() << "expected PlanError";
  } catch (const PlanError& e) {
    EXPECT_EQ(e.status(), conic::SolveStatus::Infeasible);
  }
}

TEST(MpcProblem, PlanSatisfiesInvariantsWhenTemperatureBinds) {
  OneNode c;
  MpcConfig cfg;
  cfg.horizon = 3;
  const MpcProblem mp = build_problem(c.model, c.thermal, cfg, c.inputs(3, 55.95));
  const ControlPlan plan = solve(mp);
  EXPECT_LE(plan.max_invariant_violation, cfg.tolerances.feas);
  EXPECT_GT(plan.p_cr[0][0], 0.01);
  // The curtailment is spread so that the limit is reached at the last step.
  EXPECT_NEAR(*std::max_element(plan.t_next.begin(), plan.t_next.end()), 56.0, 1e-6);
  const auto kkt = conic::kkt_residuals(mp.conic, conic::HsdeSolver().solve(mp.conic, cfg.tolerances));
  EXPECT_LT(kkt.max_violation(), 1e-5);
  ASSERT_TRUE(kkt.identity_thermal && kkt.identity_p && kkt.identity_q);
  EXPECT_LT(*kkt.identity_thermal, 1e-5);
  EXPECT_LT(*kkt.identity_p, 1e-5);
  EXPECT_LT(*kkt.identity_q, 1e-5);
}

TEST(MpcProblem, ObjectiveModesAgreeWithUnitWeightAndNoReactive) {
  OneNode c;
  MpcConfig a;
  a.horizon = 3;
  a.beta = 1.0;
  a.fix_reactive_zero = true;
  MpcConfig b = a;
  b.objective = ObjectiveMode::CurtailmentOnly;
  const ControlPlan pa = solve(build_problem(c.model, c.thermal, a, c.inputs(3, 55.95)));
  const ControlPlan pb = solve(build_problem(c.model, c.thermal, b, c.inputs(3, 55.95)));
  for (std::size_t h = 0; h < 3; ++h) EXPECT_NEAR(pa.p_cr[h][0], pb.p_cr[h][0], 1e-6);
}

TEST(MpcProblem, WeightLeavesFeasibleSetUnchanged) {
  OneNode c;
  MpcConfig a, b;
  a.horizon = b.horizon = 2;
  a.beta = 1e5;
  b.beta = 3e2;
  const auto pa = build_problem(c.model, c.thermal, a, c.inputs(2, 50.0)).conic;
  const auto pb = build_problem(c.model, c.thermal, b, c.inputs(2, 50.0)).conic;
  EXPECT_TRUE(pa.eq_matrix.isApprox(pb.eq_matrix, 0.0));
  EXPECT_EQ(pa.eq_rhs, pb.eq_rhs);
  EXPECT_TRUE(pa.cone_matrix.isApprox(pb.cone_matrix, 0.0));
  EXPECT_EQ(pa.cone_rhs, pb.cone_rhs);
  EXPECT_NE(pa.quad, pb.quad);
}

TEST(MpcProblem, CurtailmentOnlyArgminIsScaleInvariant) {
  OneNode c;
  MpcConfig cfg;
  cfg.horizon = 3;
  cfg.objective = ObjectiveMode::CurtailmentOnly;
  const MpcProblem mp = build_problem(c.model, c.thermal, cfg, c.inputs(3, 55.95));
  MpcProblem scaled = mp;
  scaled.conic.quad *= 7.0;
  const ControlPlan p1 = solve(mp), p2 = solve(scaled);
  for (std::size_t h = 0; h < 3; ++h) EXPECT_NEAR(p1.p_cr[h][0], p2.p_cr[h][0], 1e-6);
}

TEST(MpcProblem, Deterministic) {
  const Scenario sc = default_scenario();
  MpcConfig cfg;
  cfg.horizon = 5;
  HorizonInputs in = forecast_slice(sc.series, 170, 5);
  in.t_initial = 55.0;
  const MpcProblem mp = build_problem(sc.feeder, sc.thermal, cfg, in);
  const ControlPlan a = solve(mp), b = solve(mp);
  for (std::size_t h = 0; h < 5; ++h) {
    EXPECT_EQ(a.p_cr[h], b.p_cr[h]);
    EXPECT_EQ(a.q_g[h], b.q_g[h]);
  }
}

TEST(MpcProblem, BackendsAgreeOnFeederProblem) {
  const Scenario sc = default_scenario();
  MpcConfig cfg;
  cfg.horizon = 5;
  HorizonInputs in = forecast_slice(sc.series, 170, 5);
  in.t_initial = 55.5;
  const MpcProblem mp = build_problem(sc.feeder, sc.thermal, cfg, in);
  const auto a = conic::HsdeSolver().solve(mp.conic, cfg.tolerances);
  const auto b = conic::DenseIpmSolver().solve(mp.conic, cfg.tolerances);
  ASSERT_EQ(a.status, conic::SolveStatus::Optimal);
  ASSERT_EQ(b.status, conic::SolveStatus::Optimal);
  EXPECT_LE(std::abs(a.objective - b.objective),
            10 * cfg.tolerances.gap * std::max(1.0, std::abs(a.objective)));
  EXPECT_LE(b.primal_residual, cfg.tolerances.feas);
  EXPECT_LE(b.dual_residual, cfg.tolerances.feas);
  EXPECT_LE(b.relative_gap, cfg.tolerances.gap);
}

TEST(MpcProblem, PolishingSharpensRelaxationIdentities) {
  OneNode c;
  MpcConfig cfg;
  cfg.horizon = 3;
  const MpcProblem mp = build_problem(c.model, c.thermal, cfg, c.inputs(3, 55.95));
  conic::HsdeSettings raw;
  raw.polish = false;
  const auto a = conic::HsdeSolver(raw).solve(mp.conic, cfg.tolerances);
  const auto b = conic::HsdeSolver().solve(mp.conic, cfg.tolerances);
  const auto ka = conic::kkt_residuals(mp.conic, a), kb = conic::kkt_residuals(mp.conic, b);
  EXPECT_LE(kb.max_violation(), 1e-6);
  EXPECT_LE(kb.max_violation(), ka.max_violation());
  EXPECT_NEAR(a.objective, b.objective, 1e-8 * std::abs(a.objective));
  for (Eigen::Index i = 0; i < a.x.size(); ++i) EXPECT_NEAR(a.x[i], b.x[i], 1e-5);
}

// Exhaustive search over (p_cr, q_g) on a 1e-3 grid with the exact quadratic
// thermal constraint; every grid point is feasible for the unrelaxed problem.
TEST(MpcProblem, MatchesGridSearchOnSingleNode) {
  OneNode c;
  const double t0 = 55.95;
  MpcConfig cfg;
  cfg.beta = 1.0;
  const ControlPlan plan = solve(build_problem(c.model, c.thermal, cfg, c.inputs(1, t0)));

  const double r = 0.01, x = 0.0075, s = 2.5, smax = 1.0;
  const ThermalParams th;
  double best = INFINITY, best_pcr = 0, best_qg = 0;
  for (int i = 0; i <= 900; ++i) {
    const double pcr = 1e-3 * i;
    for (int k = -1000; k <= 1000; ++k) {
      const double qg = 1e-3 * k;
      if (qg * qg + (c.p_g - pcr) * (c.p_g - pcr) > smax * smax) continue;
      const double p = c.p_g - pcr - c.p_c, q = qg - c.q_c;
      const double v = 1.0 + r * p + x * q;
      if (v > 1.05 || v < 0.95) continue;
      const double t1 = th.a * t0 + th.b * s * s * (p * p + q * q) + th.c * 35.0 + th.d;
      if (t1 > th.t_max) continue;
      const double obj = pcr * pcr + qg * qg;
      if (obj < best) best = obj, best_pcr = pcr, best_qg = qg;
    }
  }
  ASSERT_TRUE(std::isfinite(best));
  EXPECT_GT(best_pcr, 0.05);  // the temperature limit is active
  EXPECT_NEAR(plan.objective, best, 1e-3);
  EXPECT_LE(plan.objective, best + 1e-9);
  EXPECT_NEAR(plan.p_cr[0][0], best_pcr, 2e-3);
  EXPECT_NEAR(plan.q_g[0][0], best_qg, 2e-3);
}
