#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gridmpc/conic/problem.hpp"
#include "gridmpc/feeder.hpp"
#include "gridmpc/forecast.hpp"
#include "gridmpc/thermal.hpp"

namespace gridmpc {

enum class ObjectiveMode { CurtailmentOnly, CurtailmentPlusQ };

inline const char* to_string(ObjectiveMode m) {
  return m == ObjectiveMode::CurtailmentOnly ? "curtailment_only" : "curtailment_plus_q";
}

inline ObjectiveMode objective_mode_from_string(const std::string& s) {
  if (s == "curtailment_only") return ObjectiveMode::CurtailmentOnly;
  if (s == "curtailment_plus_q") return ObjectiveMode::CurtailmentPlusQ;
  throw ConfigError("unknown objective mode: " + s);
}

struct MpcConfig {
  std::size_t horizon = 1;
  double beta = 1e5;
  ObjectiveMode objective = ObjectiveMode::CurtailmentPlusQ;
  conic::Tolerances tolerances{1e-6, 1e-8};
  double eps_tight = 1e-6;  ///< relative: rho <= eps_tight * max(1, e)
  double eps_bind = 1e-4;   ///< voltage margin counted as non-binding
  /// Pins every q_g to zero (used to compare objective modes).
  bool fix_reactive_zero = false;

  void validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(tolerances.feas > 0.0) || !(tolerances.gap > 0.0) || !(eps_tight > 0.0) ||
        !(eps_bind > 0.0))
      throw ConfigError("tolerances must be positive");
  }
};

/// Variable indexing of the relaxed horizon problem. Per step h the block is
///   p[0..N), q[0..N), v[0..N), T(h+1), P_total, Q_total, e, p_cr[0..N), q_g[0..N)
struct MpcLayout {
  std::size_t horizon = 0;
  std::size_t nodes = 0;

  static constexpr std::size_t scalars_per_step = 4;
  std::size_t per_step() const { return 5 * nodes + scalars_per_step; }
  std::size_t variable_count() const { return horizon * per_step(); }

  conic::Index base(std::size_t h) const { return static_cast<conic::Index>(h * per_step()); }
  conic::Index p(std::size_t h, std::size_t j) const { return base(h) + static_cast<conic::Index>(j); }
  conic::Index q(std::size_t h, std::size_t j) const {
    return base(h) + static_cast<conic::Index>(nodes + j);
  }
  conic::Index v(std::size_t h, std::size_t j) const {
    return base(h) + static_cast<conic::Index>(2 * nodes + j);
  }
  conic::Index temp_next(std::size_t h) const { return base(h) + static_cast<conic::Index>(3 * nodes); }
  conic::Index p_total(std::size_t h) const { return temp_next(h) + 1; }
  conic::Index q_total(std::size_t h) const { return temp_next(h) + 2; }
  conic::Index e(std::size_t h) const { return temp_next(h) + 3; }
  conic::Index p_cr(std::size_t h, std::size_t j) const {
    return base(h) + static_cast<conic::Index>(3 * nodes + scalars_per_step + j);
  }
  conic::Index q_g(std::size_t h, std::size_t j) const {
    return base(h) + static_cast<conic::Index>(4 * nodes + scalars_per_step + j);
  }
};

/// Number of decision variables of the relaxed problem: (5N + 4) H.
inline std::size_t mpc_variable_count(std::size_t nodes, std::size_t horizon) {
  return MpcLayout{horizon, nodes}.variable_count();
}

/// Constraint-row bookkeeping for reading back duals by role.
struct MpcRows {
  std::vector<conic::Index> thermal_eq;      ///< per h
  std::vector<conic::Index> p_total_eq;      ///< per h
  std::vector<conic::Index> q_total_eq;      ///< per h
  std::vector<conic::Index> t_max_row;       ///< orthant row, per h (bounds T(h+1))
  std::vector<std::vector<conic::Index>> v_max_row;  ///< [h][j]
  std::vector<std::vector<conic::Index>> v_min_row;  ///< [h][j]
  std::vector<std::size_t> relaxation_cone;  ///< SOC slice index per h
};

struct MpcProblem {
  conic::ConicProblem conic;
  MpcLayout layout;
  MpcRows rows;
  HorizonInputs inputs;
  MpcConfig config;
  double s_base = 1.0;
  double v_min = 0.0, v_max = 0.0;
  std::vector<double> s_max;      ///< per node, 0 if no inverter
  std::vector<bool> has_inverter;
  ThermalParams thermal;
  std::vector<std::string> warnings;
};

inline std::string step_name(const char* what, std::size_t h) {
  return std::string(what) + "[" + std::to_string(h) + "]";
}
inline std::string node_name(const char* what, std::size_t h, std::size_t j) {
  return std::string(what) + "[" + std::to_string(h) + "," + std::to_string(j + 1) + "]";
}

/// Builds the relaxed convex horizon problem: LinDistFlow equalities,
/// relaxed thermal dynamics T(h+1) = a T(h) + b e(h) + c T_a + d with
/// e(h) >= |S_total(h)|^2 (MVA^2), temperature and voltage limits, curtailment
/// bounds and the inverter capability cones.
inline MpcProblem build_problem(const FeederModel& model, const ThermalParams& thermal,
                                const MpcConfig& cfg, const HorizonInputs& inputs,
                                const SensitivityMatrices* sens = nullptr) {
  using conic::AffineExpr;
  cfg.validate();
  thermal.validate();
  const std::size_t n = model.node_count();
  const std::size_t horizon = inputs.horizon();
  if (horizon == 0) throw DomainError("build_problem: empty horizon");
  if (!std::isfinite(inputs.t_initial)) throw DomainError("build_problem: T(0) not set");
  for (const auto& st : inputs.steps) {
    const auto nn = static_cast<Eigen::Index>(n);
    if (st.p_c.size() != nn || st.q_c.size() != nn || st.p_g.size() != nn)
      throw DomainError("build_problem: forecast vector length mismatch");
  }

  SensitivityMatrices local;
  if (sens == nullptr) {
    local = sensitivity_matrices(model);
    sens = &local;
  }

  MpcProblem mp;
  mp.layout = {horizon, n};
  mp.inputs = inputs;
  mp.config = cfg;
  mp.s_base = model.s_base();
  mp.v_min = model.v_min();
  mp.v_max = model.v_max();
  mp.thermal = thermal;
  for (std::size_t j = 0; j < n; ++j) {
    mp.has_inverter.push_back(model.has_inverter(j));
    mp.s_max.push_back(model.has_inverter(j) ? model.inverter(j)->s_max : 0.0);
  }
  if (inputs.t_initial > thermal.t_max)
    mp.warnings.push_back("measured temperature exceeds T_max; problem may be infeasible");

  const MpcLayout& L = mp.layout;
  MpcRows& rows = mp.rows;
  conic::ProblemBuilder b;
  for (std::size_t h = 0; h < horizon; ++h) {
    for (std::size_t j = 0; j < n; ++j) b.add_variable(node_name("p", h, j));
    for (std::size_t j = 0; j < n; ++j) b.add_variable(node_name("q", h, j));
    for (std::size_t j = 0; j < n; ++j) b.add_variable(node_name("v", h, j));
    b.add_variable(step_name("T", h + 1));
    b.add_variable(step_name("P_total", h));
    b.add_variable(step_name("Q_total", h));
    b.add_variable(step_name("e", h));
    for (std::size_t j = 0; j < n; ++j) b.add_variable(node_name("p_cr", h, j));
    for (std::size_t j = 0; j < n; ++j) b.add_variable(node_name("q_g", h, j));
  }

  const double s2 = 2.0 * model.s_base();
  rows.v_max_row.resize(horizon);
  rows.v_min_row.resize(horizon);
  for (std::size_t h = 0; h < horizon; ++h) {
    const StepData& st = inputs.steps[h];
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      // p = p_g - p_cr - p_c
      b.add_equality(AffineExpr::var(L.p(h, j))
                         .add(L.p_cr(h, j), 1.0)
                         .plus(-(st.p_g[jj] - st.p_c[jj])),
                     node_name("p_def", h, j));
      // q = q_g - q_c
      b.add_equality(AffineExpr::var(L.q(h, j)).add(L.q_g(h, j), -1.0).plus(st.q_c[jj]),
                     node_name("q_def", h, j));
      // v = R p + X q + v0
      AffineExpr v = AffineExpr::var(L.v(h, j));
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        v.add(L.p(h, i), -sens->R(jj, ii));
        v.add(L.q(h, i), -sens->X(jj, ii));
      }
      v.plus(-st.v0);
      b.add_equality(v, node_name("v_def", h, j));
    }
    // T(h+1) = a T(h) + b e(h) + c T_a + d
    AffineExpr th = AffineExpr::var(L.temp_next(h)).add(L.e(h), -thermal.b);
    if (h == 0)
      th.plus(-thermal.a * inputs.t_initial);
    else
      th.add(L.temp_next(h - 1), -thermal.a);
    th.plus(-(thermal.c * st.t_ambient + thermal.d));
    rows.thermal_eq.push_back(b.add_equality(th, step_name("thermal", h)));

    AffineExpr pt = AffineExpr::var(L.p_total(h));
    AffineExpr qt = AffineExpr::var(L.q_total(h));
    for (std::size_t j = 0; j < n; ++j) {
      pt.add(L.p(h, j), -1.0);
      qt.add(L.q(h, j), -1.0);
    }
    rows.p_total_eq.push_back(b.add_equality(pt, step_name("P_total_def", h)));
    rows.q_total_eq.push_back(b.add_equality(qt, step_name("Q_total_def", h)));

    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (!model.has_inverter(j)) {
        b.add_equality(AffineExpr::var(L.p_cr(h, j)), node_name("p_cr_fix", h, j));
        b.add_equality(AffineExpr::var(L.q_g(h, j)), node_name("q_g_fix", h, j));
      } else {
        if (st.p_g[jj] <= 0.0)
          b.add_equality(AffineExpr::var(L.p_cr(h, j)), node_name("p_cr_fix", h, j));
        if (cfg.fix_reactive_zero)
          b.add_equality(AffineExpr::var(L.q_g(h, j)), node_name("q_g_fix", h, j));
      }
    }

    // Objective.
    for (std::size_t j = 0; j < n; ++j) {
      if (cfg.objective == ObjectiveMode::CurtailmentPlusQ) {
        b.add_quadratic(L.p_cr(h, j), 2.0 * cfg.beta);
        b.add_quadratic(L.q_g(h, j), 2.0);
      } else {
        b.add_quadratic(L.p_cr(h, j), 2.0);
      }
    }
  }

  // Orthant rows.
  for (std::size_t h = 0; h < horizon; ++h) {
    const StepData& st = inputs.steps[h];
    rows.t_max_row.push_back(b.add_nonpositive(
        AffineExpr::var(L.temp_next(h)).plus(-thermal.t_max), step_name("T_max", h + 1)));
    for (std::size_t j = 0; j < n; ++j) {
      rows.v_max_row[h].push_back(b.add_nonpositive(
          AffineExpr::var(L.v(h, j)).plus(-model.v_max()), node_name("v_max", h, j)));
      rows.v_min_row[h].push_back(b.add_nonpositive(
          AffineExpr::var(L.v(h, j), -1.0).plus(model.v_min()), node_name("v_min", h, j)));
    }
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (model.has_inverter(j) && st.p_g[jj] > 0.0) {
        b.add_nonpositive(AffineExpr::var(L.p_cr(h, j), -1.0), node_name("p_cr_lo", h, j));
        b.add_nonpositive(AffineExpr::var(L.p_cr(h, j)).plus(-st.p_g[jj]),
                          node_name("p_cr_hi", h, j));
      }
    }
  }

  // Second-order cones.
  for (std::size_t h = 0; h < horizon; ++h) {
    const StepData& st = inputs.steps[h];
    for (std::size_t j = 0; j < n; ++j) {
      if (!model.has_inverter(j)) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      // || (q_g, p_g - p_cr) || <= s_max
      b.add_soc({AffineExpr(model.inverter(j)->s_max), AffineExpr::var(L.q_g(h, j)),
                 AffineExpr::var(L.p_cr(h, j), -1.0).plus(st.p_g[jj])},
                node_name("inverter", h, j));
    }
    // || (2 s P, 2 s Q, e - 1) || <= e + 1   <=>   e >= (s P)^2 + (s Q)^2
    rows.relaxation_cone.push_back(static_cast<std::size_t>(
        b.add_soc({AffineExpr::var(L.e(h)).plus(1.0), AffineExpr::var(L.p_total(h), s2),
                   AffineExpr::var(L.q_total(h), s2), AffineExpr::var(L.e(h)).plus(-1.0)},
                  step_name("relaxation", h))));
  }

  mp.conic = b.build();
  return mp;
}

/// Dual variables in the Lagrangian sign convention of the thermal analysis:
/// nu for equalities, lambda >= 0 for g(x) <= 0.
struct PlanDuals {
  std::vector<double> lambda_e;  ///< relaxation e(h) >= |S(h)|^2, per h
  std::vector<double> lambda_t;  ///< T(h+1) <= T_max, per h
  std::vector<double> nu_t;      ///< thermal equality, per h
  std::vector<double> nu_p;      ///< P_total definition, per h
  std::vector<double> nu_q;      ///< Q_total definition, per h
  std::vector<Vector> lambda_v_max;
  std::vector<Vector> lambda_v_min;
};

struct ControlPlan {
  std::vector<Vector> p_cr;     ///< per h
  std::vector<Vector> q_g;      ///< per h
  std::vector<Vector> v;        ///< predicted voltages per h
  std::vector<double> t_next;   ///< predicted T(h+1) (relaxed model)
  std::vector<double> p_total;  ///< per unit
  std::vector<double> q_total;  ///< per unit
  std::vector<double> e;        ///< MVA^2
  double objective = 0.0;
  PlanDuals duals;
  conic::SolveStatus status = conic::SolveStatus::Optimal;
  int iterations = 0;
  double solve_time = 0.0;
  double max_invariant_violation = 0.0;
};

/// Raised when a solve did not produce an optimal plan.
class PlanError : public SolverError {
 public:
  explicit PlanError(conic::SolveStatus status)
      : SolverError(conic::to_string(status)), status_(status) {}
  conic::SolveStatus status() const noexcept { return status_; }

 private:
  conic::SolveStatus status_;
};

inline PlanDuals extract_duals(const MpcProblem& mp, const conic::ConicSolution& sol) {
  PlanDuals d;
  const std::size_t horizon = mp.layout.horizon;
  for (std::size_t h = 0; h < horizon; ++h) {
    const conic::Index cone = mp.conic.soc_offset(mp.rows.relaxation_cone[h]);
    // Relaxation cone u = (e+1, 2sP, 2sQ, e-1): the multiplier of
    // |sP|^2 + |sQ|^2 - e <= 0 is z0 + z3.
    d.lambda_e.push_back(sol.cone_dual[cone] + sol.cone_dual[cone + 3]);
    d.lambda_t.push_back(sol.cone_dual[mp.rows.t_max_row[h]]);
    d.nu_t.push_back(sol.eq_dual[mp.rows.thermal_eq[h]]);
    d.nu_p.push_back(sol.eq_dual[mp.rows.p_total_eq[h]]);
    d.nu_q.push_back(sol.eq_dual[mp.rows.q_total_eq[h]]);
    Vector vmax(static_cast<Eigen::Index>(mp.layout.nodes));
    Vector vmin(static_cast<Eigen::Index>(mp.layout.nodes));
    for (std::size_t j = 0; j < mp.layout.nodes; ++j) {
      vmax[static_cast<Eigen::Index>(j)] = sol.cone_dual[mp.rows.v_max_row[h][j]];
      vmin[static_cast<Eigen::Index>(j)] = sol.cone_dual[mp.rows.v_min_row[h][j]];
    }
    d.lambda_v_max.push_back(vmax);
    d.lambda_v_min.push_back(vmin);
  }
  return d;
}

/// Largest violation of the plan invariants (curtailment bounds, inverter
/// capability, temperature limit, voltage band).
inline double plan_invariant_violation(const MpcProblem& mp, const ControlPlan& plan) {
  double worst = 0.0;
  auto track = [&](double v) { worst = std::max(worst, v); };
  for (std::size_t h = 0; h < mp.layout.horizon; ++h) {
    const StepData& st = mp.inputs.steps[h];
    for (std::size_t j = 0; j < mp.layout.nodes; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double pcr = plan.p_cr[h][jj], qg = plan.q_g[h][jj];
      track(-pcr);
      track(pcr - st.p_g[jj]);
      if (mp.has_inverter[j]) {
        const double pout = st.p_g[jj] - pcr;
        track(qg * qg + pout * pout - mp.s_max[j] * mp.s_max[j]);
      } else {
        track(std::abs(pcr));
        track(std::abs(qg));
      }
      track(plan.v[h][jj] - mp.v_max);
      track(mp.v_min - plan.v[h][jj]);
    }
    track(plan.t_next[h] - mp.thermal.t_max);
  }
  return worst;
}

/// Maps an optimal solution back to named trajectories and duals.
inline ControlPlan extract_plan(const MpcProblem& mp, const conic::ConicSolution& sol) {
  if (sol.status != conic::SolveStatus::Optimal) throw PlanError(sol.status);
  const MpcLayout& L = mp.layout;
  ControlPlan plan;
  plan.status = sol.status;
  plan.iterations = sol.iterations;
  plan.solve_time = sol.solve_time;
  plan.objective = sol.objective;
  const auto n = static_cast<Eigen::Index>(L.nodes);
  for (std::size_t h = 0; h < L.horizon; ++h) {
    Vector pcr(n), qg(n), v(n);
    for (std::size_t j = 0; j < L.nodes; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      pcr[jj] = sol.x[L.p_cr(h, j)];
      qg[jj] = sol.x[L.q_g(h, j)];
      v[jj] = sol.x[L.v(h, j)];
    }
    plan.p_cr.push_back(pcr);
    plan.q_g.push_back(qg);
    plan.v.push_back(v);
    plan.t_next.push_back(sol.x[L.temp_next(h)]);
    plan.p_total.push_back(sol.x[L.p_total(h)]);
    plan.q_total.push_back(sol.x[L.q_total(h)]);
    plan.e.push_back(sol.x[L.e(h)]);
  }
  plan.duals = extract_duals(mp, sol);
  plan.max_invariant_violation = plan_invariant_violation(mp, plan);
  if (plan.max_invariant_violation > mp.config.tolerances.feas)
    throw SolverError("plan violates constraints by " +
                          std::to_string(plan.max_invariant_violation),
                      plan.max_invariant_violation);
  return plan;
}

}  // namespace gridmpc
