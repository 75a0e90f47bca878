#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>

#include "gridmpc/conic/cones.hpp"
#include "gridmpc/conic/problem.hpp"

namespace gridmpc::conic {

/// Maximum absolute violation per family of optimality conditions, for the
/// Lagrangian  f + nu'(E x - e) + lambda'(G x - h).
struct KktReport {
  double stationarity = 0.0;
  double primal_equality = 0.0;
  double primal_cone = 0.0;
  double dual_cone = 0.0;
  double complementarity = 0.0;
  /// Stationarity split by variable family (name up to the first '[').
  std::map<std::string, double> stationarity_by_family;

  /// Thermal relaxation identities, evaluated per step and maximized:
  ///   -b nu_T - lambda_e = 0
  ///   2 lambda_e s^2 P_total + nu_P = 0   (same for Q)
  /// Unset when the problem carries no relaxation cones.
  std::optional<double> identity_thermal;
  std::optional<double> identity_p;
  std::optional<double> identity_q;

  double max_violation() const {
    double m = std::max({stationarity, primal_equality, primal_cone, dual_cone, complementarity});
    for (const auto& v : {identity_thermal, identity_p, identity_q})
      if (v) m = std::max(m, *v);
    return m;
  }
};

namespace detail {

inline std::string family_of(const std::string& name) {
  const auto pos = name.find('[');
  return pos == std::string::npos ? name : name.substr(0, pos);
}

/// "relaxation[3]" -> "[3]"
inline std::string suffix_of(const std::string& name) {
  const auto pos = name.find('[');
  return pos == std::string::npos ? std::string() : name.substr(pos);
}

inline double coefficient(const SparseMatrix& m, Index row, Index col) { return m.coeff(row, col); }

}  // namespace detail

inline KktReport kkt_residuals(const ConicProblem& p, const ConicSolution& sol) {
  if (sol.status != SolveStatus::Optimal)
    throw SolverError(std::string("kkt_residuals: solution status is ") + to_string(sol.status));
  const Index n = p.num_vars();
  if (sol.x.size() != n || sol.eq_dual.size() != p.num_eq() || sol.cone_dual.size() != p.num_cone_rows())
    throw DomainError("kkt_residuals: solution dimensions do not match the problem");

  KktReport r;
  const Vector grad = p.quad.cwiseProduct(sol.x) + p.linear +
                      p.eq_matrix.transpose() * sol.eq_dual +
                      p.cone_matrix.transpose() * sol.cone_dual;
  for (Index i = 0; i < n; ++i) {
    const double g = std::abs(grad[i]);
    r.stationarity = std::max(r.stationarity, g);
    double& fam = r.stationarity_by_family[detail::family_of(p.var_names[static_cast<std::size_t>(i)])];
    fam = std::max(fam, g);
  }
  if (p.num_eq() > 0)
    r.primal_equality = (p.eq_matrix * sol.x - p.eq_rhs).lpNorm<Eigen::Infinity>();

  // Slack recomputed from x so that the check does not trust the solver's s.
  const Vector u = p.cone_rhs - p.cone_matrix * sol.x;
  const Vector& z = sol.cone_dual;
  for (Index i = 0; i < p.orthant_dim; ++i) {
    r.primal_cone = std::max(r.primal_cone, -u[i]);
    r.dual_cone = std::max(r.dual_cone, -z[i]);
    r.complementarity = std::max(r.complementarity, std::abs(u[i] * z[i]));
  }
  for (std::size_t k = 0; k < p.soc_dims.size(); ++k) {
    const Index off = p.soc_offset(k), d = p.soc_dims[k];
    r.primal_cone = std::max(r.primal_cone, u.segment(off + 1, d - 1).norm() - u[off]);
    r.dual_cone = std::max(r.dual_cone, z.segment(off + 1, d - 1).norm() - z[off]);
    r.complementarity =
        std::max(r.complementarity, std::abs(u.segment(off, d).dot(z.segment(off, d))));
  }

  // Relaxation identities located through the name tables.
  std::unordered_map<std::string, Index> var_index, eq_index;
  for (std::size_t i = 0; i < p.var_names.size(); ++i) var_index[p.var_names[i]] = static_cast<Index>(i);
  for (std::size_t i = 0; i < p.eq_names.size(); ++i) eq_index[p.eq_names[i]] = static_cast<Index>(i);
  auto find = [](const auto& map, const std::string& key) -> std::optional<Index> {
    const auto it = map.find(key);
    if (it == map.end()) return std::nullopt;
    return it->second;
  };
  for (std::size_t k = 0; k < p.soc_dims.size(); ++k) {
    if (detail::family_of(p.soc_names[k]) != "relaxation" || p.soc_dims[k] != 4) continue;
    const std::string sfx = detail::suffix_of(p.soc_names[k]);
    const auto e = find(var_index, "e" + sfx);
    const auto pt = find(var_index, "P_total" + sfx);
    const auto qt = find(var_index, "Q_total" + sfx);
    const auto th = find(eq_index, "thermal" + sfx);
    const auto pd = find(eq_index, "P_total_def" + sfx);
    const auto qd = find(eq_index, "Q_total_def" + sfx);
    if (!e || !pt || !qt || !th || !pd || !qd) continue;
    const Index off = p.soc_offset(k);
    const double lambda_e = z[off] + z[off + 3];
    const double b = -detail::coefficient(p.eq_matrix, *th, *e);
    // Cone rows hold u = (e+1, 2 s P, 2 s Q, e-1); cone_matrix stores -2s.
    const double s = -0.5 * detail::coefficient(p.cone_matrix, off + 1, *pt);
    const double s_q = -0.5 * detail::coefficient(p.cone_matrix, off + 2, *qt);
    const double nu_t = sol.eq_dual[*th];
    const double nu_p = sol.eq_dual[*pd];
    const double nu_q = sol.eq_dual[*qd];
    const double i24 = std::abs(-b * nu_t - lambda_e);
    const double i25 = std::abs(2.0 * lambda_e * s * s * sol.x[*pt] + nu_p);
    const double i26 = std::abs(2.0 * lambda_e * s_q * s_q * sol.x[*qt] + nu_q);
    r.identity_thermal = std::max(r.identity_thermal.value_or(0.0), i24);
    r.identity_p = std::max(r.identity_p.value_or(0.0), i25);
    r.identity_q = std::max(r.identity_q.value_or(0.0), i26);
  }
  return r;
}

}  // namespace gridmpc::conic
