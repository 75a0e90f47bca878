#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gridmpc/feeder.hpp"
#include "gridmpc/mpc.hpp"
#include "gridmpc/thermal.hpp"

namespace gridmpc {

/// Post-hoc check of the thermal relaxation e(h) >= |S_total(h)|^2.
struct TightnessReport {
  std::vector<double> rho;       ///< e(h) - (s P)^2 - (s Q)^2, MVA^2
  std::vector<double> e;
  std::vector<double> lambda_e;  ///< empty when no duals were supplied
  std::vector<bool> tight;
  std::vector<bool> voltage_binding;
  std::vector<std::vector<std::size_t>> curtailing_nodes;  ///< 0-based, per h
  bool theorem_applicable = false;
  /// Latest step that has curtailment and interior voltages.
  std::optional<std::size_t> h_star;
  std::string reason;

  /// True when the relaxation is tight for every h <= h*.
  bool tight_through_h_star() const {
    if (!h_star) return true;
    for (std::size_t h = 0; h <= *h_star; ++h)
      if (!tight[h]) return false;
    return true;
  }
  bool all_tight() const { return std::all_of(tight.begin(), tight.end(), [](bool b) { return b; }); }
};

/// Evaluates the relaxation gap per step and decides whether the sufficient
/// tightness condition applies: some node curtails more than eps_feas at a
/// step whose voltages all stay eps_bind inside the band.
inline TightnessReport tightness_report(const ControlPlan& plan, const PlanDuals* duals,
                                        const FeederModel& model, const MpcConfig& cfg) {
  TightnessReport r;
  const std::size_t horizon = plan.e.size();
  const double sb = model.s_base();
  for (std::size_t h = 0; h < horizon; ++h) {
    const double sp = sb * plan.p_total[h], sq = sb * plan.q_total[h];
    const double rho = plan.e[h] - (sp * sp + sq * sq);
    r.rho.push_back(rho);
    r.e.push_back(plan.e[h]);
    r.tight.push_back(rho <= cfg.eps_tight * std::max(1.0, plan.e[h]));
    const Vector& v = plan.v[h];
    r.voltage_binding.push_back(v.maxCoeff() >= model.v_max() - cfg.eps_bind ||
                                v.minCoeff() <= model.v_min() + cfg.eps_bind);
    std::vector<std::size_t> curt;
    for (Eigen::Index j = 0; j < plan.p_cr[h].size(); ++j)
      if (plan.p_cr[h][j] > cfg.tolerances.feas) curt.push_back(static_cast<std::size_t>(j));
    if (!curt.empty() && !r.voltage_binding.back()) r.h_star = h;
    r.curtailing_nodes.push_back(std::move(curt));
  }
  if (duals == nullptr || duals->lambda_e.size() != horizon) {
    r.theorem_applicable = false;
    r.reason = "duals unavailable";
    return r;
  }
  r.lambda_e = duals->lambda_e;
  if (r.h_star) {
    r.theorem_applicable = true;
    r.reason = "curtailment with interior voltages at h=" + std::to_string(*r.h_star);
  } else {
    bool any_curt = false;
    for (const auto& c : r.curtailing_nodes) any_curt = any_curt || !c.empty();
    r.reason = any_curt ? "every curtailing step has a binding voltage" : "no curtailment";
  }
  return r;
}

inline TightnessReport tightness_report(const MpcProblem& mp, const ControlPlan& plan,
                                        const FeederModel& model) {
  return tightness_report(plan, &plan.duals, model, mp.config);
}

struct DualRecursionResult {
  /// max_h |lambda_e(h) - b sum_{k>h} a^{k-h-1} lambda_T(k)|
  double max_deviation = 0.0;
  /// max over h <= h' of a^{h'-h} lambda_e(h') - lambda_e(h), floored at 0.
  double monotonicity_violation = 0.0;
};

/// Compares the relaxation multipliers with the value implied by the
/// temperature-limit multipliers through the thermal recursion. lambda_t[h]
/// belongs to the bound on T(h+1).
inline DualRecursionResult dual_recursion_check(const PlanDuals& duals, const ThermalParams& thermal,
                                                std::size_t horizon,
                                                const std::vector<bool>& voltage_binding = {}) {
  if (duals.lambda_e.size() != horizon || duals.lambda_t.size() != horizon)
    throw DomainError("dual_recursion_check: dual vectors do not match the horizon");
  if (std::any_of(voltage_binding.begin(), voltage_binding.end(), [](bool b) { return b; }))
    throw DomainError("recursion derived under non-binding voltages");
  DualRecursionResult out;
  // Backward accumulation: implied(h) = b lambda_T(h) + a implied(h+1).
  std::vector<double> implied(horizon + 1, 0.0);
  for (std::size_t h = horizon; h-- > 0;)
    implied[h] = thermal.b * duals.lambda_t[h] + thermal.a * implied[h + 1];
  for (std::size_t h = 0; h < horizon; ++h)
    out.max_deviation = std::max(out.max_deviation, std::abs(duals.lambda_e[h] - implied[h]));
  for (std::size_t h = 0; h < horizon; ++h) {
    double decay = 1.0;
    for (std::size_t hp = h; hp < horizon; ++hp) {
      out.monotonicity_violation =
          std::max(out.monotonicity_violation, decay * duals.lambda_e[hp] - duals.lambda_e[h]);
      decay *= thermal.a;
    }
  }
  return out;
}

}  // namespace gridmpc
