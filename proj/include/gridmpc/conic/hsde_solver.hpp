#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "gridmpc/conic/cones.hpp"
#include "gridmpc/conic/polish.hpp"
#include "gridmpc/conic/problem.hpp"

namespace gridmpc::conic {

struct HsdeSettings {
  int max_iter = 100;
  /// Iteration continues until these tighter targets are met; the looser
  /// contract tolerances are accepted only when progress stalls.
  double target_feas = 1e-11;
  double target_gap = 1e-12;
  double infeasibility_tol = 1e-8;
  double step_fraction = 0.99;
  double static_reg = 1e-9;
  int refine_iters = 12;
  /// Newton refinement on the identified active set after convergence.
  bool polish = true;
};

/// Primal-dual interior-point method on the homogeneous self-dual embedding
///
///   P x + A'z + q tau = 0,   A x + s - b tau = 0,
///   x'P x / tau + q'x + b'z + kappa = 0,   (s, z) in K x K*, tau, kappa >= 0
///
/// with Nesterov-Todd scaling, Mehrotra predictor-corrector and a sparse
/// quasi-definite LDL' factorization of the reduced KKT matrix. Equality rows
/// are treated as the zero cone (s = 0, z free).
class HsdeSolver final : public ConicBackend {
 public:
  explicit HsdeSolver(HsdeSettings settings = {}) : settings_(settings) {}

  std::string name() const override { return "hsde-sparse"; }

  ConicSolution solve(const ConicProblem& prob, const Tolerances& tol) const override {
    const auto t_start = std::chrono::steady_clock::now();
    prob.validate();
    Workspace ws(prob);
    ConicSolution out = run(ws, tol);
    if (settings_.polish) conic::polish(prob, out);
    out.backend = name();
    out.solve_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
  }

 private:
  struct Workspace {
    Index n, m0, mc, m;
    ConeLayout cones;
    SparseMatrix A;   // [eq; cone] rows
    SparseMatrix At;
    Vector b, q, pdiag;

    explicit Workspace(const ConicProblem& p)
        : n(p.num_vars()),
          m0(p.num_eq()),
          mc(p.num_cone_rows()),
          m(p.num_eq() + p.num_cone_rows()),
          cones(p.orthant_dim, p.soc_dims) {
      std::vector<Triplet> t;
      t.reserve(static_cast<std::size_t>(p.eq_matrix.nonZeros() + p.cone_matrix.nonZeros()));
      for (Index c = 0; c < p.eq_matrix.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(p.eq_matrix, c); it; ++it)
          t.emplace_back(it.row(), it.col(), it.value());
      for (Index c = 0; c < p.cone_matrix.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(p.cone_matrix, c); it; ++it)
          t.emplace_back(it.row() + m0, it.col(), it.value());
      A.resize(m, n);
      A.setFromTriplets(t.begin(), t.end());
      At = A.transpose();
      b.resize(m);
      b << p.eq_rhs, p.cone_rhs;
      q = p.linear;
      pdiag = p.quad;
    }
  };

  /// Reduced KKT operator [P + d, A'; A, -(H + d)] with refinement against
  /// the unregularized matrix.
  class KktSystem {
   public:
    KktSystem(const Workspace& ws, double reg) : ws_(ws), reg_(reg) {}

    bool factor(const NtScaling* scaling, bool identity_scaling) {
      const Index n = ws_.n, m = ws_.m, m0 = ws_.m0;
      std::vector<Triplet> t;
      t.reserve(static_cast<std::size_t>(2 * ws_.A.nonZeros() + n + m + 16 * ws_.cones.soc_dims.size()));
      for (Index i = 0; i < n; ++i) t.emplace_back(i, i, ws_.pdiag[i]);
      for (Index c = 0; c < ws_.A.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(ws_.A, c); it; ++it) {
          t.emplace_back(n + it.row(), it.col(), it.value());
          t.emplace_back(it.col(), n + it.row(), it.value());
        }
      for (Index i = 0; i < m0; ++i) t.emplace_back(n + i, n + i, 0.0);
      const auto& k = ws_.cones;
      for (Index i = 0; i < k.orthant; ++i) {
        const double h = identity_scaling ? 1.0
                                          : scaling->orthant_w[i] * scaling->orthant_w[i];
        t.emplace_back(n + m0 + i, n + m0 + i, -h);
      }
      for (std::size_t c = 0; c < k.soc_dims.size(); ++c) {
        const Index s = n + m0 + k.soc_start[c], d = k.soc_dims[c];
        const Eigen::MatrixXd h = identity_scaling ? Eigen::MatrixXd::Identity(d, d)
                                                   : scaling->soc_hessian(c);
        for (Index i = 0; i < d; ++i)
          for (Index j = 0; j < d; ++j) t.emplace_back(s + i, s + j, -h(i, j));
      }
      full_.resize(n + m, n + m);
      full_.setFromTriplets(t.begin(), t.end());
      SparseMatrix reg = full_;
      for (Index i = 0; i < n + m; ++i) reg.coeffRef(i, i) += (i < n ? reg_ : -reg_);
      if (!analyzed_) {
        ldlt_.analyzePattern(reg);
        analyzed_ = true;
      }
      ldlt_.factorize(reg);
      return ldlt_.info() == Eigen::Success;
    }

    Vector solve(const Vector& rhs, int refine) const {
      Vector sol = ldlt_.solve(rhs);
      const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
      for (int it = 0; it < refine; ++it) {
        const Vector r = rhs - full_ * sol;
        if (r.lpNorm<Eigen::Infinity>() <= 1e-15 * scale) break;
        const Vector corr = ldlt_.solve(r);
        sol += corr;
      }
      return sol;
    }

   private:
    const Workspace& ws_;
    double reg_;
    SparseMatrix full_;
    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<Index>> ldlt_;
    bool analyzed_ = false;
  };

  struct Iterate {
    Vector x, z, s;  // z, s have length m; first m0 entries belong to the zero cone
    double tau = 1.0, kappa = 1.0;
  };

  struct Metrics {
    double pres = 0, dres = 0, gap = 0, relgap = 0, pcost = 0, dcost = 0;
  };

  Metrics metrics(const Workspace& ws, const Iterate& it) const {
    Metrics mt;
    const Vector x = it.x / it.tau, z = it.z / it.tau, s = it.s / it.tau;
    const Vector ax = ws.A * x;
    const Vector px = ws.pdiag.cwiseProduct(x);
    const Vector atz = ws.At * z;
    mt.pres = (ax + s - ws.b).lpNorm<Eigen::Infinity>() /
              std::max({1.0, ws.b.lpNorm<Eigen::Infinity>(), ax.lpNorm<Eigen::Infinity>(),
                        s.lpNorm<Eigen::Infinity>()});
    mt.dres = (px + atz + ws.q).lpNorm<Eigen::Infinity>() /
              std::max({1.0, ws.q.lpNorm<Eigen::Infinity>(), px.lpNorm<Eigen::Infinity>(),
                        atz.lpNorm<Eigen::Infinity>()});
    const double xpx = x.dot(px);
    mt.pcost = 0.5 * xpx + ws.q.dot(x);
    mt.dcost = -0.5 * xpx - ws.b.dot(z);
    mt.gap = std::abs(mt.pcost - mt.dcost);
    mt.relgap = mt.gap / std::max(1.0, std::min(std::abs(mt.pcost), std::abs(mt.dcost)));
    return mt;
  }

  ConicSolution run(Workspace& ws, const Tolerances& tol) const {
    const Index n = ws.n, m0 = ws.m0, mc = ws.mc;
    const ConeLayout& k = ws.cones;
    KktSystem kkt(ws, settings_.static_reg);
    Iterate it;

    // Initial point from [P A'; A -I][x; z] = [-q; b] (zero cone block 0).
    if (!kkt.factor(nullptr, true)) return failed(ws, "initial factorization failed");
    {
      Vector rhs(n + ws.m);
      rhs << -ws.q, ws.b;
      const Vector sol = kkt.solve(rhs, settings_.refine_iters);
      it.x = sol.head(n);
      it.z = sol.tail(ws.m);
      it.s = Vector::Zero(ws.m);
      Vector sc = -it.z.tail(mc);
      Vector zc = it.z.tail(mc);
      shift_into_cone(k, sc);
      shift_into_cone(k, zc);
      it.s.tail(mc) = sc;
      it.z.tail(mc) = zc;
    }

    const double degree = static_cast<double>(k.degree()) + 1.0;
    ConicSolution best;
    double best_merit = std::numeric_limits<double>::infinity();
    Iterate best_it = it;
    NtScaling w;
    int iter = 0;
    SolveStatus status = SolveStatus::MaxIter;

    for (; iter <= settings_.max_iter; ++iter) {
      const Vector px = ws.pdiag.cwiseProduct(it.x);
      const double xpx = it.x.dot(px);
      const Vector rx = px + ws.At * it.z + ws.q * it.tau;
      const Vector rz = ws.A * it.x + it.s - ws.b * it.tau;
      const double rtau = xpx / it.tau + ws.q.dot(it.x) + ws.b.dot(it.z) + it.kappa;
      const double mu =
          (it.s.tail(mc).dot(it.z.tail(mc)) + it.tau * it.kappa) / degree;

      const Metrics mt = metrics(ws, it);
      const double merit = std::max({mt.pres, mt.dres, mt.relgap});
      if (merit < best_merit && std::isfinite(merit)) {
        best_merit = merit;
        best_it = it;
      }
      if (mt.pres <= settings_.target_feas && mt.dres <= settings_.target_feas &&
          (mt.relgap <= settings_.target_gap)) {
        status = SolveStatus::Optimal;
        break;
      }
      // Certificates (unnormalized iterate).
      const double bz = ws.b.dot(it.z);
      const double qx = ws.q.dot(it.x);
      if (it.tau < it.kappa) {
        if (bz < 0.0 &&
            (ws.At * it.z).lpNorm<Eigen::Infinity>() <= -bz * settings_.infeasibility_tol * 1e2 &&
            -bz > settings_.infeasibility_tol * std::max(1.0, it.z.lpNorm<Eigen::Infinity>())) {
          status = SolveStatus::Infeasible;
          break;
        }
        if (qx < 0.0 && px.lpNorm<Eigen::Infinity>() <= -qx * 1e-6 &&
            (ws.A * it.x + it.s).lpNorm<Eigen::Infinity>() <= -qx * 1e-6) {
          status = SolveStatus::Unbounded;
          break;
        }
      }
      if (iter == settings_.max_iter) break;

      const Vector sc = it.s.tail(mc), zc = it.z.tail(mc);
      w.compute(k, sc, zc);
      const Vector lambda = w.apply(k, zc);
      if (!kkt.factor(&w, false)) break;

      Vector rhs_c(n + ws.m);
      rhs_c << -ws.q, ws.b;
      const Vector sol_c = kkt.solve(rhs_c, settings_.refine_iters);
      const Vector x1 = sol_c.head(n), z1 = sol_c.tail(ws.m);
      const Vector g = 2.0 * px / it.tau + ws.q;
      const double denom = g.dot(x1) + ws.b.dot(z1) - xpx / (it.tau * it.tau) - it.kappa / it.tau;

      struct Dir {
        Vector dx, dz, ds;
        double dtau = 0, dkappa = 0;
      };
      // Newton direction for complementarity targets ds_rhs (scaled) and
      // dk_rhs, with residual reduction factor eta.
      auto direction = [&](double eta, const Vector& ds_rhs, double dk_rhs) {
        const Vector lds = jordan_divide(k, lambda, ds_rhs);
        const Vector wl = w.apply(k, lds);
        Vector rhs(n + ws.m);
        rhs.head(n) = -eta * rx;
        rhs.segment(n, m0) = -eta * rz.head(m0);
        rhs.tail(mc) = -eta * rz.tail(mc) - wl;
        const Vector sol = kkt.solve(rhs, settings_.refine_iters);
        const Vector x2 = sol.head(n), z2 = sol.tail(ws.m);
        Dir d;
        d.dtau = (-eta * rtau - dk_rhs / it.tau - g.dot(x2) - ws.b.dot(z2)) / denom;
        d.dx = x2 + d.dtau * x1;
        d.dz = z2 + d.dtau * z1;
        d.ds = Vector::Zero(ws.m);
        const Vector dzc = d.dz.tail(mc);
        d.ds.tail(mc) = wl - w.apply(k, w.apply(k, dzc));
        d.dkappa = (dk_rhs - it.kappa * d.dtau) / it.tau;
        return d;
      };
      auto step_to_boundary = [&](const Dir& d) {
        double a = std::min(max_step(k, sc, Vector(d.ds.tail(mc))),
                            max_step(k, zc, Vector(d.dz.tail(mc))));
        if (d.dtau < 0.0) a = std::min(a, -it.tau / d.dtau);
        if (d.dkappa < 0.0) a = std::min(a, -it.kappa / d.dkappa);
        return a;
      };

      const Vector ll = jordan_product(k, lambda, lambda);
      const Dir aff = direction(1.0, -ll, -it.tau * it.kappa);
      const double a_aff = std::min(1.0, step_to_boundary(aff));
      const double sigma = std::pow(1.0 - a_aff, 3);

      const Vector ds_aff_scaled = w.apply_inverse(k, Vector(aff.ds.tail(mc)));
      const Vector dz_aff_scaled = w.apply(k, Vector(aff.dz.tail(mc)));
      const Vector ds_rhs = -ll + sigma * mu * cone_identity(k) -
                            jordan_product(k, ds_aff_scaled, dz_aff_scaled);
      const double dk_rhs = -it.tau * it.kappa + sigma * mu - aff.dtau * aff.dkappa;
      const Dir d = direction(1.0 - sigma, ds_rhs, dk_rhs);
      const double a_max = step_to_boundary(d);
      const double alpha = std::min(1.0, settings_.step_fraction * a_max);
      if (!(alpha > 1e-10) || !std::isfinite(alpha)) break;

      it.x += alpha * d.dx;
      it.z += alpha * d.dz;
      it.s += alpha * d.ds;
      it.tau += alpha * d.dtau;
      it.kappa += alpha * d.dkappa;
      if (!it.x.allFinite() || !it.z.allFinite() || !std::isfinite(it.tau)) break;
    }

    if (status == SolveStatus::MaxIter) {
      // Stalled or out of iterations: accept the best iterate if it meets the
      // contract tolerances.
      const Metrics mt = metrics(ws, best_it);
      if (mt.pres <= tol.feas && mt.dres <= tol.feas && mt.relgap <= tol.gap) {
        status = SolveStatus::Optimal;
        it = best_it;
      }
    }
    ConicSolution sol = unpack(ws, it, status);
    sol.iterations = iter;
    return sol;
  }

  ConicSolution unpack(const Workspace& ws, const Iterate& it, SolveStatus status) const {
    ConicSolution sol;
    sol.status = status;
    const double scale = (status == SolveStatus::Infeasible || status == SolveStatus::Unbounded)
                             ? 1.0
                             : it.tau;
    sol.x = it.x / scale;
    sol.eq_dual = it.z.head(ws.m0) / scale;
    sol.cone_dual = it.z.tail(ws.mc) / scale;
    sol.cone_slack = it.s.tail(ws.mc) / scale;
    const Metrics mt = metrics(ws, it);
    sol.primal_residual = mt.pres;
    sol.dual_residual = mt.dres;
    sol.gap = mt.gap;
    sol.relative_gap = mt.relgap;
    sol.objective = mt.pcost;
    return sol;
  }

  ConicSolution failed(const Workspace& ws, const std::string&) const {
    ConicSolution sol;
    sol.status = SolveStatus::MaxIter;
    sol.x = Vector::Zero(ws.n);
    sol.eq_dual = Vector::Zero(ws.m0);
    sol.cone_dual = Vector::Zero(ws.mc);
    sol.cone_slack = Vector::Zero(ws.mc);
    return sol;
  }

  HsdeSettings settings_;
};

}  // namespace gridmpc::conic
