#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "gridmpc/conic/cones.hpp"
#include "gridmpc/conic/problem.hpp"

namespace gridmpc::conic {

struct DenseSettings {
  int max_iter = 200;
  double target_feas = 1e-10;
  double target_gap = 1e-11;
  double step_fraction = 0.99;
  double reg = 1e-11;
  int refine_iters = 4;
  /// Refuse problems whose reduced system would exceed this many rows.
  Index max_dense_dim = 4000;
};

/// Reference backend: infeasible-start primal-dual interior-point method
/// working directly on (x, y, z, s) without the homogeneous embedding. Each
/// Newton step factors the dense quasi-definite matrix
///
///   [ P   A'  G'   ]
///   [ A   0   0    ]
///   [ G   0   -W^2 ]
///
/// with partial-pivoting LU. The cone block is kept rather than eliminated:
/// forming G' W^-2 G loses the dual residual once cones turn inactive. Intended for cross-checking on small problems;
/// it does not produce infeasibility certificates (status MaxIter instead).
class DenseIpmSolver final : public ConicBackend {
 public:
  explicit DenseIpmSolver(DenseSettings settings = {}) : settings_(settings) {}

  std::string name() const override { return "dense-ipm"; }

  ConicSolution solve(const ConicProblem& prob, const Tolerances& tol) const override {
    const auto t_start = std::chrono::steady_clock::now();
    prob.validate();
    if (prob.num_vars() + prob.num_eq() + prob.num_cone_rows() > settings_.max_dense_dim)
      throw ConfigError("dense-ipm: problem too large for the dense backend");
    ConicSolution out = run(prob, tol);
    out.backend = name();
    out.solve_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
  }

 private:
  using Dense = Eigen::MatrixXd;

  struct State {
    Vector x, y, z, s;
  };

  struct Residuals {
    Vector rx, ry, rz;
    double pres = 0, dres = 0, pcost = 0, dcost = 0, gap = 0, relgap = 0;
  };

  Residuals residuals(const ConicProblem& p, const Dense& A, const Dense& G, const State& st) const {
    Residuals r;
    const Vector px = p.quad.cwiseProduct(st.x);
    const Vector aty = A.transpose() * st.y;
    const Vector gtz = G.transpose() * st.z;
    const Vector ax = A * st.x;
    const Vector gx = G * st.x;
    r.rx = px + p.linear + aty + gtz;
    r.ry = ax - p.eq_rhs;
    r.rz = gx + st.s - p.cone_rhs;
    const double inf = [&] {
      double m = 1.0;
      if (p.eq_rhs.size()) m = std::max(m, p.eq_rhs.lpNorm<Eigen::Infinity>());
      if (p.cone_rhs.size()) m = std::max(m, p.cone_rhs.lpNorm<Eigen::Infinity>());
      if (ax.size()) m = std::max(m, ax.lpNorm<Eigen::Infinity>());
      if (gx.size()) m = std::max(m, gx.lpNorm<Eigen::Infinity>());
      return m;
    }();
    double pr = 0.0;
    if (r.ry.size()) pr = std::max(pr, r.ry.lpNorm<Eigen::Infinity>());
    if (r.rz.size()) pr = std::max(pr, r.rz.lpNorm<Eigen::Infinity>());
    r.pres = pr / inf;
    double dscale = std::max(1.0, px.size() ? px.lpNorm<Eigen::Infinity>() : 0.0);
    if (p.linear.size()) dscale = std::max(dscale, p.linear.lpNorm<Eigen::Infinity>());
    if (aty.size()) dscale = std::max(dscale, aty.lpNorm<Eigen::Infinity>());
    if (gtz.size()) dscale = std::max(dscale, gtz.lpNorm<Eigen::Infinity>());
    r.dres = (r.rx.size() ? r.rx.lpNorm<Eigen::Infinity>() : 0.0) / dscale;
    const double xpx = st.x.dot(px);
    r.pcost = 0.5 * xpx + p.linear.dot(st.x);
    r.dcost = -0.5 * xpx - p.eq_rhs.dot(st.y) - p.cone_rhs.dot(st.z);
    r.gap = std::abs(r.pcost - r.dcost);
    r.relgap = r.gap / std::max(1.0, std::min(std::abs(r.pcost), std::abs(r.dcost)));
    return r;
  }

  ConicSolution run(const ConicProblem& p, const Tolerances& tol) const {
    const Index n = p.num_vars(), m0 = p.num_eq(), mc = p.num_cone_rows();
    const ConeLayout k(p.orthant_dim, p.soc_dims);
    const Dense A = Dense(p.eq_matrix);
    const Dense G = Dense(p.cone_matrix);
    const Vector pdiag = p.quad;

    NtScaling w;
    Eigen::PartialPivLU<Dense> lu;
    Dense kkt;
    const Index dim = n + m0 + mc;
    auto factor = [&](const NtScaling* scaling) {
      kkt = Dense::Zero(dim, dim);
      kkt.topLeftCorner(n, n).diagonal() = pdiag;
      kkt.block(0, n, n, m0) = A.transpose();
      kkt.block(n, 0, m0, n) = A;
      kkt.block(0, n + m0, n, mc) = G.transpose();
      kkt.block(n + m0, 0, mc, n) = G;
      Dense h = Dense::Identity(mc, mc);
      if (scaling != nullptr) {
        h.topLeftCorner(k.orthant, k.orthant).diagonal() = scaling->orthant_w.cwiseAbs2();
        for (std::size_t c = 0; c < k.soc_dims.size(); ++c)
          h.block(k.soc_start[c], k.soc_start[c], k.soc_dims[c], k.soc_dims[c]) = scaling->soc_hessian(c);
      }
      kkt.bottomRightCorner(mc, mc) = -h;
      Dense reg = kkt;
      reg.topLeftCorner(n, n).diagonal().array() += settings_.reg;
      reg.bottomRightCorner(m0 + mc, m0 + mc).diagonal().array() -= settings_.reg;
      lu.compute(reg);
    };
    auto solve_kkt = [&](const Vector& rhs) {
      Vector sol = lu.solve(rhs);
      for (int i = 0; i < settings_.refine_iters; ++i) sol += lu.solve(rhs - kkt * sol);
      return sol;
    };

    // Initial point: least-squares-like solve with W = I, then shift.
    State st;
    factor(nullptr);
    {
      // [P A' G'; A 0 0; G 0 -I] [x; y; z] = [-q; b; h]
      Vector rhs(dim);
      rhs << -p.linear, p.eq_rhs, p.cone_rhs;
      const Vector sol = solve_kkt(rhs);
      st.x = sol.head(n);
      st.y = sol.segment(n, m0);
      st.z = sol.tail(mc);
      st.s = -st.z;
      shift_into_cone(k, st.s);
      shift_into_cone(k, st.z);
    }

    const double degree = std::max<double>(1.0, static_cast<double>(k.degree()));
    SolveStatus status = SolveStatus::MaxIter;
    State best = st;
    double best_merit = std::numeric_limits<double>::infinity();
    int iter = 0;
    for (; iter <= settings_.max_iter; ++iter) {
      const Residuals r = residuals(p, A, G, st);
      const double merit = std::max({r.pres, r.dres, r.relgap});
      if (std::isfinite(merit) && merit < best_merit) {
        best_merit = merit;
        best = st;
      }
      if (r.pres <= settings_.target_feas && r.dres <= settings_.target_feas &&
          r.relgap <= settings_.target_gap) {
        status = SolveStatus::Optimal;
        break;
      }
      if (iter == settings_.max_iter) break;

      const double mu = mc > 0 ? st.s.dot(st.z) / degree : 0.0;
      w.compute(k, st.s, st.z);
      const Vector lambda = w.apply(k, st.z);
      factor(&w);

      struct Dir {
        Vector dx, dy, dz, ds;
      };
      auto direction = [&](const Vector& ds_rhs) {
        const Vector lds = jordan_divide(k, lambda, ds_rhs);
        const Vector wl = w.apply(k, lds);
        // G dx - W^2 dz = -rz - wl,  ds = -rz - G dx
        Vector rhs(dim);
        rhs << -r.rx, -r.ry, -r.rz - wl;
        const Vector sol = solve_kkt(rhs);
        Dir d;
        d.dx = sol.head(n);
        d.dy = sol.segment(n, m0);
        d.dz = sol.tail(mc);
        d.ds = -r.rz - G * d.dx;
        return d;
      };
      auto step_to_boundary = [&](const Dir& d) {
        return std::min(max_step(k, st.s, d.ds), max_step(k, st.z, d.dz));
      };

      const Vector ll = jordan_product(k, lambda, lambda);
      const Dir aff = direction(-ll);
      const double a_aff = std::min(1.0, step_to_boundary(aff));
      const double sigma = std::pow(1.0 - a_aff, 3);
      const Vector ds_scaled = w.apply_inverse(k, aff.ds);
      const Vector dz_scaled = w.apply(k, aff.dz);
      const Dir d = direction(-ll + sigma * mu * cone_identity(k) -
                              jordan_product(k, ds_scaled, dz_scaled));
      const double alpha = std::min(1.0, settings_.step_fraction * step_to_boundary(d));
      if (!(alpha > 1e-12) || !std::isfinite(alpha)) break;
      State next = st;
      next.x += alpha * d.dx;
      next.y += alpha * d.dy;
      next.z += alpha * d.dz;
      next.s += alpha * d.ds;
      if (!next.x.allFinite() || !next.y.allFinite() || !next.z.allFinite() || !next.s.allFinite()) break;
      st = std::move(next);
    }

    if (status == SolveStatus::MaxIter) {
      // Stalled: report the best iterate, optimal if it meets the contract.
      st = best;
      const Residuals r = residuals(p, A, G, best);
      if (r.pres <= tol.feas && r.dres <= tol.feas && r.relgap <= tol.gap) status = SolveStatus::Optimal;
    }
    const Residuals r = residuals(p, A, G, st);
    ConicSolution sol;
    sol.status = status;
    sol.x = st.x;
    sol.eq_dual = st.y;
    sol.cone_dual = st.z;
    sol.cone_slack = st.s;
    sol.primal_residual = r.pres;
    sol.dual_residual = r.dres;
    sol.gap = r.gap;
    sol.relative_gap = r.relgap;
    sol.objective = r.pcost;
    sol.iterations = iter;
    return sol;
  }

  DenseSettings settings_;
};

}  // namespace gridmpc::conic
