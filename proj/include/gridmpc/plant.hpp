#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "gridmpc/feeder.hpp"
#include "gridmpc/forecast.hpp"
#include "gridmpc/lindistflow.hpp"
#include "gridmpc/thermal.hpp"
#include "gridmpc/trace.hpp"

namespace gridmpc {

struct AcSolution {
  Vector v;              ///< voltage magnitudes, p.u.
  double p0 = 0.0;       ///< active power leaving the feeder at the substation, p.u.
  double q0 = 0.0;
  double loss_p = 0.0;   ///< total series losses, p.u.
  double loss_q = 0.0;
  int iterations = 0;
  bool converged = false;
  double mismatch = 0.0;  ///< max complex power mismatch at the last iterate
};

struct AcSettings {
  int max_iter = 100;
  double tolerance = 1e-8;
};

/// Backward-forward sweep for constant-PQ injections on the chain feeder with
/// a stiff substation voltage v0 (angle 0).
///
/// Export convention: p0 + j q0 is the complex power delivered *into* the
/// substation bus, so p0 = sum(p) - losses under reverse flow.
inline AcSolution ac_power_flow(const FeederModel& model, const InjectionState& inj, double v0,
                                const AcSettings& settings = {}) {
  using cplx = std::complex<double>;
  const std::size_t n = model.node_count();
  const auto nn = static_cast<Eigen::Index>(n);
  if (inj.p.size() != nn || inj.q.size() != nn)
    throw DomainError("ac_power_flow: injection length mismatch");
  if (!(v0 > 0.0)) throw DomainError("ac_power_flow: v0 must be positive");

  std::vector<cplx> s(n), z(n), v(n, cplx(v0, 0.0)), inj_current(n), branch(n);
  for (std::size_t j = 0; j < n; ++j) {
    s[j] = cplx(inj.p[static_cast<Eigen::Index>(j)], inj.q[static_cast<Eigen::Index>(j)]);
    z[j] = cplx(model.lines()[j].r, model.lines()[j].x);
  }

  AcSolution out;
  for (int it = 1; it <= settings.max_iter; ++it) {
    for (std::size_t j = 0; j < n; ++j) inj_current[j] = std::conj(s[j] / v[j]);
    // Backward: branch[l] is the current in line l flowing towards the substation.
    cplx acc(0.0, 0.0);
    for (std::size_t l = n; l-- > 0;) {
      acc += inj_current[l];
      branch[l] = acc;
    }
    // Forward: V_{l+1} = V_l + z_l I_l.
    cplx up(v0, 0.0);
    for (std::size_t l = 0; l < n; ++l) {
      up += z[l] * branch[l];
      v[l] = up;
    }
    double mismatch = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      mismatch = std::max(mismatch, std::abs(v[j] * std::conj(inj_current[j]) - s[j]));
    out.iterations = it;
    out.mismatch = mismatch;
    if (mismatch < settings.tolerance) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    throw SolverError("ac_power_flow: no convergence after " +
                          std::to_string(settings.max_iter) + " iterations",
                      out.mismatch);

  // Final currents consistent with the converged voltages.
  cplx acc(0.0, 0.0);
  for (std::size_t l = n; l-- > 0;) {
    acc += std::conj(s[l] / v[l]);
    branch[l] = acc;
  }
  out.v.resize(nn);
  for (std::size_t j = 0; j < n; ++j) out.v[static_cast<Eigen::Index>(j)] = std::abs(v[j]);
  const cplx s0 = cplx(v0, 0.0) * std::conj(branch[0]);
  out.p0 = s0.real();
  out.q0 = s0.imag();
  for (std::size_t l = 0; l < n; ++l) {
    const double i2 = std::norm(branch[l]);
    out.loss_p += model.lines()[l].r * i2;
    out.loss_q += model.lines()[l].x * i2;
  }
  return out;
}

/// Setpoints sent to the inverters; vectors over all nodes.
struct ControlDecision {
  Vector p_cr;
  Vector q_g;
};

struct PlantState {
  double temperature = 35.0;
  Vector p_cr;
  Vector q_g;
  std::size_t t = 0;
};

struct PlantStepResult {
  PlantState state;
  TraceRow row;
  AcSolution ac;
};

/// Projects setpoints onto the device limits. Returns true when any
/// setpoint moved by more than `tol`.
inline bool clamp_setpoints(const FeederModel& model, const Vector& p_g, ControlDecision& d,
                            double tol = 1e-6) {
  bool moved = false;
  for (std::size_t j = 0; j < model.node_count(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    double pcr = d.p_cr[jj], qg = d.q_g[jj];
    const double pcr0 = pcr, qg0 = qg;
    if (!model.has_inverter(j)) {
      pcr = 0.0;
      qg = 0.0;
    } else {
      pcr = std::clamp(pcr, 0.0, std::max(p_g[jj], 0.0));
      const double smax = model.inverter(j)->s_max;
      const double pout = p_g[jj] - pcr;
      const double qlim = std::sqrt(std::max(smax * smax - pout * pout, 0.0));
      qg = std::clamp(qg, -qlim, qlim);
    }
    if (std::abs(pcr - pcr0) > tol || std::abs(qg - qg0) > tol) moved = true;
    d.p_cr[jj] = pcr;
    d.q_g[jj] = qg;
  }
  return moved;
}

/// Advances the physical system by one step: applies the (clamped) setpoints,
/// solves the AC power flow and updates the transformer temperature with the
/// AC head flow converted to MVA.
inline PlantStepResult plant_step(const PlantState& state, const FeederModel& model,
                                  const SensitivityMatrices& sens, const ThermalParams& thermal,
                                  ControlDecision applied, const StepData& exo) {
  PlantStepResult out;
  const bool clamped = clamp_setpoints(model, exo.p_g, applied);
  const InjectionState inj =
      net_injections(exo.p_g, applied.p_cr, exo.p_c, applied.q_g, exo.q_c);
  out.ac = ac_power_flow(model, inj, exo.v0);

  const double sb = model.s_base();
  const TotalFlows tot = total_flows(inj);

  out.state.temperature =
      temp_step(thermal, state.temperature, out.ac.p0 * sb, out.ac.q0 * sb, exo.t_ambient);
  out.state.p_cr = applied.p_cr;
  out.state.q_g = applied.q_g;
  out.state.t = state.t + 1;

  TraceRow& r = out.row;
  r.t = state.t;
  r.v_plant = out.ac.v;
  r.v_model = voltages(sens.R, sens.X, inj, exo.v0);
  r.p0 = out.ac.p0;
  r.q0 = out.ac.q0;
  r.p_total = tot.p;
  r.q_total = tot.q;
  r.t_plant = out.state.temperature;
  r.t_model = temp_step(thermal, state.temperature, tot.p * sb, tot.q * sb, exo.t_ambient);
  const auto pv = model.inverter_nodes();
  r.p_g.resize(static_cast<Eigen::Index>(pv.size()));
  r.p_cr.resize(r.p_g.size());
  r.q_g.resize(r.p_g.size());
  for (std::size_t k = 0; k < pv.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const auto j = static_cast<Eigen::Index>(pv[k]);
    r.p_g[kk] = exo.p_g[j];
    r.p_cr[kk] = applied.p_cr[j];
    r.q_g[kk] = applied.q_g[j];
  }
  r.overvoltage = r.v_plant.maxCoeff() > model.v_max();
  r.undervoltage = r.v_plant.minCoeff() < model.v_min();
  r.overtemperature = r.t_plant > thermal.t_max;
  r.clamped = clamped;
  return out;
}

}  // namespace gridmpc
