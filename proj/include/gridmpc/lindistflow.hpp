#pragma once

#include <cmath>
#include <string>

#include "gridmpc/feeder.hpp"

namespace gridmpc {

/// Net nodal injections, per unit; positive means power into the network.
struct InjectionState {
  Vector p;
  Vector q;
};

struct TotalFlows {
  double p = 0.0;
  double q = 0.0;
};

/// p = p_g - p_cr - p_c, q = q_g - q_c.
inline InjectionState net_injections(const Vector& p_g, const Vector& p_cr,
                                     const Vector& p_c, const Vector& q_g,
                                     const Vector& q_c) {
  const auto n = p_g.size();
  if (p_cr.size() != n || p_c.size() != n || q_g.size() != n || q_c.size() != n)
    throw DomainError("net_injections: vector length mismatch");
  for (Eigen::Index j = 0; j < n; ++j) {
    if (p_cr[j] < 0.0 || p_cr[j] > p_g[j])
      throw DomainError("net_injections: curtailment at node " +
                        std::to_string(j + 1) +
                        " outside [0, available generation]");
  }
  return {p_g - p_cr - p_c, q_g - q_c};
}

/// v = R p + X q + v0 1 (magnitude form, no factor of two).
inline Vector voltages(const Matrix& R, const Matrix& X,
                       const InjectionState& inj, double v0) {
  return R * inj.p + X * inj.q + Vector::Constant(inj.p.size(), v0);
}

/// Head-of-feeder flow predicted by the linear model: sum of injections.
inline TotalFlows total_flows(const InjectionState& inj) {
  return {inj.p.sum(), inj.q.sum()};
}

/// Branch flows solving p = A^T P. Positive P is flow along the line's
/// direction, away from the substation. Diagnostics only.
inline InjectionState branch_flows(const FeederModel& model,
                                   const InjectionState& inj) {
  const Matrix at = reduced_incidence(model).transpose();
  Eigen::PartialPivLU<Matrix> lu(at);
  return {lu.solve(inj.p), lu.solve(inj.q)};
}

}  // namespace gridmpc
