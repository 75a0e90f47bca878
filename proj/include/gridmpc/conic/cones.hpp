#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "gridmpc/conic/problem.hpp"

namespace gridmpc::conic {

/// Product cone R+^l x Q^{d_1} x ... acting on contiguous vector segments.
struct ConeLayout {
  Index orthant = 0;
  std::vector<Index> soc_dims;
  std::vector<Index> soc_start;
  Index dim = 0;

  ConeLayout() = default;
  ConeLayout(Index l, std::vector<Index> socs) : orthant(l), soc_dims(std::move(socs)) {
    Index off = l;
    for (Index d : soc_dims) {
      soc_start.push_back(off);
      off += d;
    }
    dim = off;
  }
  /// Barrier degree.
  Index degree() const { return orthant + static_cast<Index>(soc_dims.size()); }
};

/// Identity element of the cone.
inline Vector cone_identity(const ConeLayout& k) {
  Vector e = Vector::Zero(k.dim);
  e.head(k.orthant).setOnes();
  for (Index s : k.soc_start) e[s] = 1.0;
  return e;
}

/// Jordan product u o v.
inline Vector jordan_product(const ConeLayout& k, const Vector& u, const Vector& v) {
  Vector w(k.dim);
  w.head(k.orthant) = u.head(k.orthant).cwiseProduct(v.head(k.orthant));
  for (std::size_t c = 0; c < k.soc_dims.size(); ++c) {
    const Index s = k.soc_start[c], d = k.soc_dims[c];
    w[s] = u.segment(s, d).dot(v.segment(s, d));
    w.segment(s + 1, d - 1) =
        u[s] * v.segment(s + 1, d - 1) + v[s] * u.segment(s + 1, d - 1);
  }
  return w;
}

/// Solves lambda o y = r for y (lambda interior).
inline Vector jordan_divide(const ConeLayout& k, const Vector& lambda, const Vector& r) {
  Vector y(k.dim);
  y.head(k.orthant) = r.head(k.orthant).cwiseQuotient(lambda.head(k.orthant));
  for (std::size_t c = 0; c < k.soc_dims.size(); ++c) {
    const Index s = k.soc_start[c], d = k.soc_dims[c];
    const double l0 = lambda[s];
    const auto l1 = lambda.segment(s + 1, d - 1);
    const double det = l0 * l0 - l1.squaredNorm();
    const double y0 = (l0 * r[s] - l1.dot(r.segment(s + 1, d - 1))) / det;
    y[s] = y0;
    y.segment(s + 1, d - 1) = (r.segment(s + 1, d - 1) - y0 * l1) / l0;
  }
  return y;
}

/// Smallest "eigenvalue" per cone, minimized across the product.
inline double min_eigenvalue(const ConeLayout& k, const Vector& u) {
  double m = std::numeric_limits<double>::infinity();
  if (k.orthant > 0) m = u.head(k.orthant).minCoeff();
  for (std::size_t c = 0; c < k.soc_dims.size(); ++c) {
    const Index s = k.soc_start[c], d = k.soc_dims[c];
    m = std::min(m, u[s] - u.segment(s + 1, d - 1).norm());
  }
  return m;
}

/// Moves every cone block so that its smallest eigenvalue is at least 1.
inline void shift_into_cone(const ConeLayout& k, Vector& u) {
  for (Index i = 0; i < k.orthant; ++i)
    if (u[i] < 1.0) u[i] = 1.0;
  for (std::size_t c = 0; c < k.soc_dims.size(); ++c) {
    const Index s = k.soc_start[c], d = k.soc_dims[c];
    const double alpha = u[s] - u.segment(s + 1, d - 1).norm();
    if (alpha < 1.0) u[s] += 1.0 - alpha;
  }
}

/// Largest step t with u + t du staying in the cone (u interior); +inf if
/// the ray never leaves.
inline double max_step(const ConeLayout& k, const Vector& u, const Vector& du) {
  double t = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < k.orthant; ++i)
    if (du[i] < 0.0) t = std::min(t, -u[i] / du[i]);
  for (std::size_t c = 0; c < k.soc_dims.size(); ++c) {
    const Index s = k.soc_start[c], d = k.soc_dims[c];
    const double u0 = u[s], du0 = du[s];
    const auto u1 = u.segment(s + 1, d - 1);
    const auto du1 = du.segment(s + 1, d - 1);
    // f(t) = qa t^2 + 2 qb t + qc, qc > 0
    const double qa = du0 * du0 - du1.squaredNorm();
    const double qb = u0 * du0 - u1.dot(du1);
    const double qc = std::max(u0 * u0 - u1.squaredNorm(), 0.0);
    double root = std::numeric_limits<double>::infinity();
    auto consider = [&](double r) {
      if (r > 0.0 && u0 + r * du0 >= 0.0) root = std::min(root, r);
    };
    if (std::abs(qa) < 1e-300) {
      if (qb < 0.0) consider(-qc / (2.0 * qb));
    } else {
      const double disc = qb * qb - qa * qc;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double tq = -qb - std::copysign(sq, qb);
        if (tq != 0.0) {
          consider(tq / qa);
          consider(qc / tq);
        }
      }
    }
    if (du0 < 0.0) root = std::min(root, -u0 / du0);
    t = std::min(t, root);
  }
  return t;
}

/// Nesterov-Todd scaling W (block diagonal, symmetric) with W z = W^{-1} s.
struct NtScaling {
  Vector orthant_w;                  ///< diag sqrt(s/z)
  std::vector<Eigen::MatrixXd> soc;  ///< dense W per cone
  std::vector<Eigen::MatrixXd> soc_inv;

  void compute(const ConeLayout& k, const Vector& s, const Vector& z) {
    orthant_w = (s.head(k.orthant).cwiseQuotient(z.head(k.orthant))).cwiseSqrt();
    soc.resize(k.soc_dims.size());
    soc_inv.resize(k.soc_dims.size());
    for (std::size_t c = 0; c < k.soc_dims.size(); ++c) {
      const Index st = k.soc_start[c], d = k.soc_dims[c];
      const Vector sc = s.segment(st, d), zc = z.segment(st, d);
      // Factored determinant; the expanded form cancels near the boundary.
      const double sn = sc.tail(d - 1).norm(), zn = zc.tail(d - 1).norm();
      const double sdet = std::sqrt(std::max((sc[0] - sn) * (sc[0] + sn), 1e-300));
      const double zdet = std::sqrt(std::max((zc[0] - zn) * (zc[0] + zn), 1e-300));
      const Vector sb = sc / sdet, zb = zc / zdet;
      const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(zb)));
      Vector w(d);
      w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
      w.tail(d - 1) = (sb.tail(d - 1) - zb.tail(d - 1)) / (2.0 * gamma);
      const double eta = std::sqrt(sdet / zdet);
      Eigen::MatrixXd wm(d, d), wi(d, d);
      const Vector w1 = w.tail(d - 1);
      wm(0, 0) = w[0];
      wm.block(0, 1, 1, d - 1) = w1.transpose();
      wm.block(1, 0, d - 1, 1) = w1;
      wm.block(1, 1, d - 1, d - 1) =
          Eigen::MatrixXd::Identity(d - 1, d - 1) + w1 * w1.transpose() / (1.0 + w[0]);
      wi = wm;
      wi.block(0, 1, 1, d - 1) *= -1.0;
      wi.block(1, 0, d - 1, 1) *= -1.0;
      soc[c] = eta * wm;
      soc_inv[c] = wi / eta;
    }
  }

  Vector apply(const ConeLayout& k, const Vector& v) const {
    Vector out(k.dim);
    out.head(k.orthant) = orthant_w.cwiseProduct(v.head(k.orthant));
    for (std::size_t c = 0; c < k.soc_dims.size(); ++c)
      out.segment(k.soc_start[c], k.soc_dims[c]) = soc[c] * v.segment(k.soc_start[c], k.soc_dims[c]);
    return out;
  }
  Vector apply_inverse(const ConeLayout& k, const Vector& v) const {
    Vector out(k.dim);
    out.head(k.orthant) = v.head(k.orthant).cwiseQuotient(orthant_w);
    for (std::size_t c = 0; c < k.soc_dims.size(); ++c)
      out.segment(k.soc_start[c], k.soc_dims[c]) = soc_inv[c] * v.segment(k.soc_start[c], k.soc_dims[c]);
    return out;
  }
  /// H = W W, block diagonal.
  Eigen::MatrixXd soc_hessian(std::size_t c) const { return soc[c] * soc[c]; }
};

}  // namespace gridmpc::conic
