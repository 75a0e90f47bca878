#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gridmpc/conic/dense_solver.hpp"
#include "gridmpc/conic/hsde_solver.hpp"
#include "gridmpc/conic/kkt.hpp"

using namespace gridmpc::conic;

namespace {

const Tolerances kTol{1e-6, 1e-8};

ConicProblem one_var_bound() {
  ProblemBuilder b;
  const Index x = b.add_variable("x");
  b.add_quadratic(x, 2.0);  // x^2
  b.add_nonpositive(AffineExpr::var(x, -1.0).plus(3.0), "x_ge_3");
  return b.build();
}

ConicProblem soc_epigraph() {
  ProblemBuilder b;
  const Index p = b.add_variable("P");
  const Index q = b.add_variable("Q");
  const Index e = b.add_variable("e");
  b.add_linear(e, 1.0);
  b.add_equality(AffineExpr::var(p).plus(-3.0), "fix_P");
  b.add_equality(AffineExpr::var(q).plus(-4.0), "fix_Q");
  b.add_soc({AffineExpr::var(e).plus(1.0), AffineExpr::var(p, 2.0), AffineExpr::var(q, 2.0),
             AffineExpr::var(e).plus(-1.0)},
            "epigraph");
  return b.build();
}

/// Random strictly feasible, bounded problem with orthant and SOC rows.
ConicProblem random_problem(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int n = 3 + static_cast<int>(rng() % 6);
  ProblemBuilder b;
  std::vector<double> x0(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Index v = b.add_variable("x[" + std::to_string(i) + "]");
    b.add_quadratic(v, 0.1 + std::abs(u(rng)));
    b.add_linear(v, u(rng));
    x0[static_cast<std::size_t>(i)] = u(rng);
  }
  auto random_row = [&] {
    AffineExpr e;
    for (int i = 0; i < n; ++i)
      if (rng() % 2) e.add(i, u(rng));
    return e;
  };
  auto eval = [&](const AffineExpr& e) {
    double acc = e.constant;
    for (const auto& [v, c] : e.terms) acc += c * x0[static_cast<std::size_t>(v)];
    return acc;
  };
  if (rng() % 2) {
    AffineExpr e = random_row();
    e.add(0, 1.0);
    e.plus(-eval(e));
    b.add_equality(e, "eq");
  }
  for (int k = 0; k < 4; ++k) {
    AffineExpr e = random_row();
    e.plus(-eval(e) - 0.1 - std::abs(u(rng)));  // g(x0) < 0
    b.add_nonpositive(e, "lin");
  }
  for (int k = 0; k < 2; ++k) {
    const int d = 2 + static_cast<int>(rng() % 3);
    std::vector<AffineExpr> rows;
    double tail = 0.0;
    for (int r = 1; r < d; ++r) {
      AffineExpr e = random_row();
      tail += std::pow(eval(e), 2);
      rows.push_back(e);
    }
    AffineExpr head = random_row();
    head.plus(std::sqrt(tail) + 0.5 - eval(head));
    rows.insert(rows.begin(), head);
    b.add_soc(rows, "cone");
  }
  return b.build();
}

}  // namespace

class Backends : public ::testing::TestWithParam<int> {
 protected:
  const ConicBackend& backend() const {
    static const HsdeSolver hsde;
    static const DenseIpmSolver dense;
    return GetParam() == 0 ? static_cast<const ConicBackend&>(hsde) : dense;
  }
};

TEST_P(Backends, QuadraticWithLowerBound) {
  const ConicSolution s = backend().solve(one_var_bound(), kTol);
  ASSERT_EQ(s.status, SolveStatus::Optimal);
  EXPECT_NEAR(s.x[0], 3.0, 1e-7);
  EXPECT_NEAR(s.cone_dual[0], 6.0, 1e-6);
  EXPECT_NEAR(s.objective, 9.0, 1e-6);
}

TEST_P(Backends, EqualityOnly) {
  ProblemBuilder b;
  const Index x = b.add_variable("x");
  b.add_equality(AffineExpr::var(x).plus(-1.0), "fix");
  const ConicSolution s = backend().solve(b.build(), kTol);
  ASSERT_EQ(s.status, SolveStatus::Optimal);
  EXPECT_NEAR(s.x[0], 1.0, 1e-9);
  EXPECT_LT(kkt_residuals(b.build(), s).max_violation(), 1e-8);
}

TEST_P(Backends, SecondOrderConeEpigraph) {
  const ConicProblem p = soc_epigraph();
  const ConicSolution s = backend().solve(p, kTol);
  ASSERT_EQ(s.status, SolveStatus::Optimal);
  EXPECT_NEAR(s.x[2], 25.0, 1e-6);
  // Active cone: the slack lies on the boundary.
  const Vector u = p.cone_rhs - p.cone_matrix * s.x;
  EXPECT_NEAR(u[0], u.tail(3).norm(), 1e-5);
  EXPECT_LT(kkt_residuals(p, s).max_violation(), 1e-6);
}

TEST_P(Backends, RandomProblemsSatisfyContract) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const ConicProblem p = random_problem(rng);
    const ConicSolution s = backend().solve(p, kTol);
    ASSERT_EQ(s.status, SolveStatus::Optimal) << "trial " << trial;
    EXPECT_LE(s.primal_residual, kTol.feas);
    EXPECT_LE(s.dual_residual, kTol.feas);
    EXPECT_LE(s.relative_gap, kTol.gap);
    for (Index i = 0; i < p.orthant_dim; ++i) EXPECT_GE(s.cone_dual[i], 0.0);
    EXPECT_LT(kkt_residuals(p, s).max_violation(), 1e-6) << "trial " << trial;
  }
}

TEST_P(Backends, Deterministic) {
  std::mt19937_64 rng(5);
  const ConicProblem p = random_problem(rng);
  const ConicSolution a = backend().solve(p, kTol), b = backend().solve(p, kTol);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.cone_dual, b.cone_dual);
  EXPECT_EQ(a.iterations, b.iterations);
}

INSTANTIATE_TEST_SUITE_P(Conic, Backends, ::testing::Values(0, 1),
                         [](const auto& info) { return info.param == 0 ? "Hsde" : "Dense"; });

TEST(Conformance, BackendsAgreeOnObjective) {
  std::mt19937_64 rng(99);
  const HsdeSolver hsde;
  const DenseIpmSolver dense;
  for (int trial = 0; trial < 25; ++trial) {
    const ConicProblem p = random_problem(rng);
    const ConicSolution a = hsde.solve(p, kTol), b = dense.solve(p, kTol);
    ASSERT_EQ(a.status, SolveStatus::Optimal);
    ASSERT_EQ(b.status, SolveStatus::Optimal);
    EXPECT_LE(std::abs(a.objective - b.objective), 10 * kTol.gap * std::max(1.0, std::abs(a.objective)));
  }
}

TEST(Polish, HandlesCostlessVariablesAndRedundantRows) {
  // y has no cost and only a slack bound; the active bound on x is repeated.
  // Both make the Newton matrix singular without regularization.
  ProblemBuilder b;
  const Index x = b.add_variable("x");
  const Index y = b.add_variable("y");
  b.add_quadratic(x, 2.0);
  b.add_nonpositive(AffineExpr::var(x, -1.0).plus(3.0), "x_ge_3");
  b.add_nonpositive(AffineExpr::var(x, -2.0).plus(6.0), "x_ge_3_again");
  b.add_nonpositive(AffineExpr::var(y).plus(-5.0), "y_le_5");
  b.add_nonpositive(AffineExpr::var(y, -1.0).plus(-5.0), "y_ge_-5");
  const ConicProblem p = b.build();
  HsdeSettings raw;
  raw.polish = false;
  ConicSolution s = HsdeSolver(raw).solve(p, kTol);
  ASSERT_EQ(s.status, SolveStatus::Optimal);
  const double before = kkt_residuals(p, s).max_violation();
  ASSERT_TRUE(polish(p, s));
  EXPECT_NEAR(s.x[0], 3.0, 1e-12);
  EXPECT_LE(kkt_residuals(p, s).max_violation(), std::min(before, 1e-10));
  EXPECT_NEAR(s.objective, 9.0, 1e-10);
}

TEST(HsdeSolver, DetectsInfeasibility) {
  ProblemBuilder b;
  const Index x = b.add_variable("x");
  b.add_quadratic(x, 1.0);
  b.add_nonpositive(AffineExpr::var(x, -1.0).plus(1.0), "x_ge_1");
  b.add_nonpositive(AffineExpr::var(x, 1.0), "x_le_0");
  EXPECT_EQ(HsdeSolver().solve(b.build(), kTol).status, SolveStatus::Infeasible);
}

TEST(HsdeSolver, DetectsUnboundedness) {
  ProblemBuilder b;
  const Index x = b.add_variable("x");
  b.add_linear(x, -1.0);
  b.add_nonpositive(AffineExpr::var(x, -1.0), "x_ge_0");
  EXPECT_EQ(HsdeSolver().solve(b.build(), kTol).status, SolveStatus::Unbounded);
}

TEST(DenseIpmSolver, RefusesLargeProblems) {
  ProblemBuilder b;
  for (int i = 0; i < 50; ++i) b.add_variable("x");
  DenseSettings s;
  s.max_dense_dim = 10;
  EXPECT_THROW(DenseIpmSolver(s).solve(b.build(), kTol), gridmpc::ConfigError);
}

TEST(KktResiduals, HandBuiltOptimumAndPerturbation) {
  const ConicProblem p = one_var_bound();
  ConicSolution s;
  s.status = SolveStatus::Optimal;
  s.x = Vector::Constant(1, 3.0);
  s.eq_dual = Vector::Zero(0);
  s.cone_dual = Vector::Constant(1, 6.0);
  KktReport r = kkt_residuals(p, s);
  EXPECT_EQ(r.stationarity, 0.0);
  EXPECT_EQ(r.complementarity, 0.0);
  EXPECT_EQ(r.primal_cone, 0.0);
  s.x[0] = 3.1;
  r = kkt_residuals(p, s);
  EXPECT_NEAR(r.stationarity, 0.2, 1e-12);
  EXPECT_NEAR(r.stationarity_by_family.at("x"), 0.2, 1e-12);
  EXPECT_NEAR(r.complementarity, 0.6, 1e-12);
}

TEST(KktResiduals, RejectsNonOptimal) {
  ConicSolution s;
  s.status = SolveStatus::Infeasible;
  EXPECT_THROW(kkt_residuals(one_var_bound(), s), gridmpc::SolverError);
}

TEST(KktResiduals, ReportsConeViolations) {
  const ConicProblem p = soc_epigraph();
  ConicSolution s;
  s.status = SolveStatus::Optimal;
  s.x = Vector(3);
  s.x << 3.0, 4.0, 20.0;  // e below |S|^2
  s.eq_dual = Vector::Zero(2);
  s.cone_dual = Vector::Zero(4);
  s.cone_dual[0] = -1.0;
  const KktReport r = kkt_residuals(p, s);
  // u = (21, 6, 8, 19): |(6, 8, 19)| - 21
  EXPECT_NEAR(r.primal_cone, std::sqrt(461.0) - 21.0, 1e-12);
  EXPECT_EQ(r.dual_cone, 1.0);
}
