#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/SparseLU>

#include "gridmpc/conic/problem.hpp"

namespace gridmpc::conic {

struct PolishSettings {
  int max_newton = 8;
  /// Slack allowed when checking that the polished point stays in the cones,
  /// relative to the size of the vector being checked.
  double cone_tol = 1e-12;
  /// Diagonal shift of the Newton matrix, scaled by the largest cost curvature
  /// on the variable block.
  double regularization = 1e-9;
  int refine = 4;
};

namespace detail {

/// Worst violation of the optimality conditions, with complementarity taken
/// componentwise (Jordan product) so that near-boundary misalignment counts.
inline double polish_merit(const ConicProblem& p, const Vector& x, const Vector& y, const Vector& z) {
  const Vector u = p.cone_rhs - p.cone_matrix * x;
  double m = (p.quad.cwiseProduct(x) + p.linear + p.eq_matrix.transpose() * y +
              p.cone_matrix.transpose() * z)
                 .lpNorm<Eigen::Infinity>();
  if (p.num_eq() > 0) m = std::max(m, (p.eq_matrix * x - p.eq_rhs).lpNorm<Eigen::Infinity>());
  for (Index i = 0; i < p.orthant_dim; ++i)
    m = std::max({m, -u[i], -z[i], std::abs(u[i] * z[i])});
  for (std::size_t k = 0; k < p.soc_dims.size(); ++k) {
    const Index off = p.soc_offset(k), d = p.soc_dims[k];
    const auto us = u.segment(off, d), zs = z.segment(off, d);
    m = std::max(m, us.tail(d - 1).norm() - us[0]);
    m = std::max(m, zs.tail(d - 1).norm() - zs[0]);
    m = std::max(m, std::abs(us.dot(zs)));
    m = std::max(m, (us[0] * zs.tail(d - 1) + zs[0] * us.tail(d - 1)).lpNorm<Eigen::Infinity>());
  }
  return m;
}

}  // namespace detail

/// Refines an interior-point solution by Newton's method on the optimality
/// conditions with the active set frozen: active orthant rows and degenerate
/// cones become equalities, inactive ones get zero duals, and each cone whose
/// slack and dual both sit on the boundary carries z = kappa (u0, -u1..).
/// The result replaces `sol` only if it stays in the cones and lowers the
/// worst KKT violation. Returns whether it was accepted.
inline bool polish(const ConicProblem& p, ConicSolution& sol, const PolishSettings& settings = {}) {
  if (sol.status != SolveStatus::Optimal) return false;
  const Index n = p.num_vars(), m0 = p.num_eq();
  Vector x = sol.x, y = sol.eq_dual;
  const Vector z0 = sol.cone_dual;
  const Vector u0 = p.cone_rhs - p.cone_matrix * x;

  // Active set.
  std::vector<Index> eq_rows;   // cone rows forced to u = 0
  std::vector<double> eq_dual;  // their starting duals
  std::vector<std::size_t> boundary;
  std::vector<double> kappa;
  for (Index i = 0; i < p.orthant_dim; ++i)
    if (z0[i] > u0[i]) {
      eq_rows.push_back(i);
      eq_dual.push_back(z0[i]);
    }
  for (std::size_t k = 0; k < p.soc_dims.size(); ++k) {
    const Index off = p.soc_offset(k), d = p.soc_dims[k];
    const auto us = u0.segment(off, d), zs = z0.segment(off, d);
    const double u_depth = us[0] - us.tail(d - 1).norm();
    const double z_depth = zs[0] - zs.tail(d - 1).norm();
    if (zs[0] <= u_depth) continue;  // slack interior, dual zero
    if (us[0] <= z_depth) {          // slack zero, dual interior
      for (Index r = 0; r < d; ++r) {
        eq_rows.push_back(off + r);
        eq_dual.push_back(zs[r]);
      }
      continue;
    }
    boundary.push_back(k);
    Vector ju = us;
    ju.tail(d - 1) *= -1.0;
    kappa.push_back(std::max(0.0, zs.dot(ju) / std::max(1e-300, us.squaredNorm())));
  }
  const Index ne = static_cast<Index>(eq_rows.size());
  const Index nb = static_cast<Index>(boundary.size());
  const Index dim = n + m0 + ne + nb;
  Vector ze = Eigen::Map<const Vector>(eq_dual.data(), ne);
  Vector kap = Eigen::Map<const Vector>(kappa.data(), nb);

  // Row-major copy of the cone matrix for row access.
  const Eigen::SparseMatrix<double, Eigen::RowMajor> G = p.cone_matrix;

  auto assemble_z = [&](const Vector& xx, const Vector& zze, const Vector& kk) {
    Vector z = Vector::Zero(p.num_cone_rows());
    for (Index i = 0; i < ne; ++i) z[eq_rows[static_cast<std::size_t>(i)]] = zze[i];
    const Vector u = p.cone_rhs - p.cone_matrix * xx;
    for (Index c = 0; c < nb; ++c) {
      const std::size_t k = boundary[static_cast<std::size_t>(c)];
      const Index off = p.soc_offset(k), d = p.soc_dims[k];
      z.segment(off, d) = kk[c] * u.segment(off, d);
      z.segment(off + 1, d - 1) *= -1.0;
    }
    return z;
  };

  const double start_merit = detail::polish_merit(p, x, y, z0);
  double best_merit = start_merit;
  Vector best_x, best_y, best_z;

  const double reg_primal =
      settings.regularization * std::max(1.0, p.quad.size() ? p.quad.lpNorm<Eigen::Infinity>() : 0.0);
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<Index>> lu;
  bool analyzed = false;
  for (int iter = 0; iter < settings.max_newton; ++iter) {
    const Vector u = p.cone_rhs - p.cone_matrix * x;
    const Vector z = assemble_z(x, ze, kap);
    // Residuals (all targeted to zero).
    Vector res(dim);
    res.head(n) = p.quad.cwiseProduct(x) + p.linear + p.eq_matrix.transpose() * y +
                  p.cone_matrix.transpose() * z;
    if (m0 > 0) res.segment(n, m0) = p.eq_matrix * x - p.eq_rhs;
    for (Index i = 0; i < ne; ++i) res[n + m0 + i] = -u[eq_rows[static_cast<std::size_t>(i)]];
    for (Index c = 0; c < nb; ++c) {
      const std::size_t k = boundary[static_cast<std::size_t>(c)];
      const Index off = p.soc_offset(k), d = p.soc_dims[k];
      const auto us = u.segment(off, d);
      // -(u0^2 - |u_bar|^2) / 2, whose x-derivative is (J u)' G
      res[n + m0 + ne + c] = -0.5 * (us[0] * us[0] - us.tail(d - 1).squaredNorm());
    }

    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(n + 2 * p.eq_matrix.nonZeros() + 2 * p.cone_matrix.nonZeros()));
    for (Index i = 0; i < n; ++i) t.emplace_back(i, i, p.quad[i]);
    for (Index c = 0; c < p.eq_matrix.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(p.eq_matrix, c); it; ++it) {
        t.emplace_back(n + it.row(), it.col(), it.value());
        t.emplace_back(it.col(), n + it.row(), it.value());
      }
    for (Index i = 0; i < ne; ++i)
      for (decltype(G)::InnerIterator it(G, eq_rows[static_cast<std::size_t>(i)]); it; ++it) {
        t.emplace_back(n + m0 + i, it.col(), it.value());
        t.emplace_back(it.col(), n + m0 + i, it.value());
      }
    for (Index c = 0; c < nb; ++c) {
      const std::size_t k = boundary[static_cast<std::size_t>(c)];
      const Index off = p.soc_offset(k), d = p.soc_dims[k];
      // b_c = G_c' J u_c and the curvature term -kappa G_c' J G_c.
      Vector bc = Vector::Zero(n);
      for (Index r = 0; r < d; ++r) {
        const double sign = r == 0 ? 1.0 : -1.0;
        for (decltype(G)::InnerIterator it(G, off + r); it; ++it) bc[it.col()] += sign * u[off + r] * it.value();
        for (decltype(G)::InnerIterator a(G, off + r); a; ++a)
          for (decltype(G)::InnerIterator b(G, off + r); b; ++b)
            t.emplace_back(a.col(), b.col(), -kap[c] * sign * a.value() * b.value());
      }
      for (Index i = 0; i < n; ++i)
        if (bc[i] != 0.0) {
          t.emplace_back(n + m0 + ne + c, i, bc[i]);
          t.emplace_back(i, n + m0 + ne + c, bc[i]);
        }
    }
    SparseMatrix J(dim, dim);
    J.setFromTriplets(t.begin(), t.end());
    J.makeCompressed();
    // Costless variables with no active constraint (and redundant active
    // rows) make J singular. Factor a quasi-definite shift instead and
    // refine against the exact J.
    for (Index i = 0; i < dim; ++i) t.emplace_back(i, i, i < n ? reg_primal : -settings.regularization);
    SparseMatrix Jr(dim, dim);
    Jr.setFromTriplets(t.begin(), t.end());
    Jr.makeCompressed();
    if (!analyzed) {
      lu.analyzePattern(Jr);
      analyzed = true;
    }
    lu.factorize(Jr);
    if (lu.info() != Eigen::Success) break;
    Vector step = lu.solve(-res);
    for (int r = 0; r < settings.refine && step.allFinite(); ++r) step += lu.solve(-res - J * step);
    if (lu.info() != Eigen::Success || !step.allFinite()) break;

    x += step.head(n);
    y += step.segment(n, m0);
    ze += step.segment(n + m0, ne);
    kap += step.tail(nb);

    // Validate: duals of equality-treated rows and kappa must stay in the
    // dual cone, inactive slacks in the primal cone.
    const Vector zn = assemble_z(x, ze, kap);
    const Vector un = p.cone_rhs - p.cone_matrix * x;
    bool inside = (kap.array() >= 0.0).all();
    const double utol = settings.cone_tol * std::max(1.0, un.lpNorm<Eigen::Infinity>());
    const double ztol = settings.cone_tol * std::max(1.0, zn.lpNorm<Eigen::Infinity>());
    for (Index i = 0; i < p.orthant_dim && inside; ++i) inside = un[i] >= -utol && zn[i] >= -ztol;
    for (std::size_t k = 0; k < p.soc_dims.size() && inside; ++k) {
      const Index off = p.soc_offset(k), d = p.soc_dims[k];
      inside = un.segment(off + 1, d - 1).norm() - un[off] <= utol &&
               zn.segment(off + 1, d - 1).norm() - zn[off] <= ztol && un[off] >= -utol;
    }
    // A full step can leave a boundary cone outside by a quadratic amount;
    // the next step usually fixes that, so keep going but never accept it.
    if (!inside) continue;
    const double merit = detail::polish_merit(p, x, y, zn);
    if (!(merit < best_merit)) {
      if (best_x.size() > 0) break;
      continue;
    }
    best_merit = merit;
    best_x = x;
    best_y = y;
    best_z = zn;
  }
  if (best_x.size() == 0) return false;

  sol.x = best_x;
  sol.eq_dual = best_y;
  sol.cone_dual = best_z;
  sol.cone_slack = p.cone_rhs - p.cone_matrix * best_x;
  // Contract metrics, same normalization as the interior-point backends.
  const Vector px = p.quad.cwiseProduct(sol.x);
  const Vector ex = p.eq_matrix * sol.x;
  const Vector aty = p.eq_matrix.transpose() * sol.eq_dual + p.cone_matrix.transpose() * sol.cone_dual;
  double cone_viol = 0.0;
  for (Index i = 0; i < p.orthant_dim; ++i) cone_viol = std::max(cone_viol, -sol.cone_slack[i]);
  for (std::size_t k = 0; k < p.soc_dims.size(); ++k) {
    const Index off = p.soc_offset(k), d = p.soc_dims[k];
    cone_viol = std::max(cone_viol, sol.cone_slack.segment(off + 1, d - 1).norm() - sol.cone_slack[off]);
  }
  const double eq_viol = m0 > 0 ? (ex - p.eq_rhs).lpNorm<Eigen::Infinity>() : 0.0;
  sol.primal_residual =
      std::max(eq_viol, cone_viol) /
      std::max({1.0, p.eq_rhs.size() ? p.eq_rhs.lpNorm<Eigen::Infinity>() : 0.0,
                p.cone_rhs.size() ? p.cone_rhs.lpNorm<Eigen::Infinity>() : 0.0,
                ex.size() ? ex.lpNorm<Eigen::Infinity>() : 0.0});
  sol.dual_residual = (px + p.linear + aty).lpNorm<Eigen::Infinity>() /
                      std::max({1.0, p.linear.lpNorm<Eigen::Infinity>(), px.lpNorm<Eigen::Infinity>(),
                                aty.lpNorm<Eigen::Infinity>()});
  const double xpx = sol.x.dot(px);
  const double pcost = 0.5 * xpx + p.linear.dot(sol.x);
  const double dcost = -0.5 * xpx - p.eq_rhs.dot(sol.eq_dual) - p.cone_rhs.dot(sol.cone_dual);
  sol.objective = pcost;
  sol.gap = std::abs(pcost - dcost);
  sol.relative_gap = sol.gap / std::max(1.0, std::min(std::abs(pcost), std::abs(dcost)));
  return true;
}

}  // namespace gridmpc::conic
