#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridmpc/error.hpp"

namespace gridmpc {

/// Coefficients of the first-order hot-spot regression
///   T(t+1) = a T(t) + b (P^2 + Q^2) + c T_a(t) + d
/// with P, Q in MVA. One step is one minute.
struct ThermalParams {
  double a = 0.9972;
  double b = 0.0241;  // degC / MVA^2
  double c = 0.0005;
  double d = 0.0931;  // degC
  double t_max = 56.0;
  double t0 = 35.0;

  void validate() const {
    auto unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!unit(a) || !unit(b) || !unit(c) || !unit(d))
      throw ConfigError("thermal coefficients a, b, c, d must lie in (0, 1)");
    if (!std::isfinite(t_max) || !std::isfinite(t0))
      throw ConfigError("thermal t_max and t0 must be finite");
  }
};

inline double temp_step(const ThermalParams& th, double t, double p_mva,
                        double q_mva, double t_ambient) {
  return th.a * t + th.b * (p_mva * p_mva + q_mva * q_mva) +
         th.c * t_ambient + th.d;
}

/// Temperature the transformer settles at with no load.
inline double zero_load_equilibrium(const ThermalParams& th, double t_ambient) {
  return (th.c * t_ambient + th.d) / (1.0 - th.a);
}

/// Constant apparent power (MVA) whose fixed point is t_target.
inline double steady_state_flow(const ThermalParams& th, double t_target,
                                double t_ambient) {
  const double radicand =
      (t_target * (1.0 - th.a) - th.c * t_ambient - th.d) / th.b;
  if (radicand < 0.0)
    throw DomainError("steady_state_flow: target " + std::to_string(t_target) +
                      " degC is below the zero-load equilibrium");
  return std::sqrt(radicand);
}

struct FlowMva {
  double p = 0.0;
  double q = 0.0;
};

/// Trajectory of length flows.size() + 1, starting at t0.
inline std::vector<double> simulate_temperature(const ThermalParams& th,
                                                double t0,
                                                std::span<const FlowMva> flows,
                                                std::span<const double> ambient) {
  if (flows.size() != ambient.size())
    throw DomainError("simulate_temperature: flow and ambient lengths differ");
  std::vector<double> out;
  out.reserve(flows.size() + 1);
  out.push_back(t0);
  for (std::size_t k = 0; k < flows.size(); ++k)
    out.push_back(temp_step(th, out.back(), flows[k].p, flows[k].q, ambient[k]));
  return out;
}

inline ThermalParams thermal_from_json(const nlohmann::json& j) {
  ThermalParams th;
  try {
    th.a = j.value("a", th.a);
    th.b = j.value("b", th.b);
    th.c = j.value("c", th.c);
    th.d = j.value("d", th.d);
    th.t_max = j.value("t_max", th.t_max);
    th.t0 = j.value("t0", th.t0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("thermal: ") + e.what());
  }
  th.validate();
  return th;
}

inline nlohmann::json to_json(const ThermalParams& th) {
  return {{"a", th.a},         {"b", th.b},   {"c", th.c},
          {"d", th.d},         {"t_max", th.t_max}, {"t0", th.t0}};
}

}  // namespace gridmpc
