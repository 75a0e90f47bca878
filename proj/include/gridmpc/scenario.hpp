#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridmpc/feeder.hpp"
#include "gridmpc/forecast.hpp"
#include "gridmpc/thermal.hpp"

namespace gridmpc {

inline constexpr const char* kScenarioFormat = "gridmpc-scenario/1";

/// Uniform load model for one node: active power in [p_min, p_max] p.u. and a
/// lagging power factor in [pf_min, pf_max].
struct LoadRange {
  double p_min = 0.0;
  double p_max = 0.0;
  double pf_min = 1.0;
  double pf_max = 1.0;

  void validate() const {
    if (!(p_min >= 0.0) || !(p_min <= p_max)) throw ConfigError("load range: need 0 <= p_min <= p_max");
    if (!(pf_min > 0.0) || !(pf_min <= pf_max) || !(pf_max <= 1.0))
      throw ConfigError("load range: need 0 < pf_min <= pf_max <= 1");
  }
};

/// Bell-shaped availability peak * exp(-(t - t_peak)^2 / (2 width^2)).
struct PvProfile {
  std::size_t node = 0;  ///< 1-based
  double peak_mw = 0.0;
  double peak_minute = 780.0;
  double width_minutes = 90.0;
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  std::size_t duration = 360;
  double dt_minutes = 1.0;
  double start_minute = 600.0;  ///< 10:00
  std::vector<LoadRange> loads;  ///< one per node
  std::vector<PvProfile> pv;
  std::vector<double> v0{1.0};         ///< constant if one entry
  std::vector<double> t_ambient{35.0};  ///< constant if one entry

  void validate(const FeederModel& model) const {
    if (duration == 0) throw ConfigError("scenario duration must be positive");
    if (!(dt_minutes > 0.0)) throw ConfigError("dt must be positive");
    if (loads.size() != model.node_count())
      throw ConfigError("scenario needs one load range per node");
    for (const auto& l : loads) l.validate();
    for (const auto& p : pv) {
      if (p.node < 1 || p.node > model.node_count())
        throw ConfigError("pv node out of range: " + std::to_string(p.node));
      if (!model.has_inverter(p.node - 1))
        throw ConfigError("pv node " + std::to_string(p.node) + " has no inverter");
      if (!(p.peak_mw >= 0.0)) throw ConfigError("pv peak must be non-negative");
      if (!(p.width_minutes > 0.0)) throw ConfigError("pv width must be positive");
    }
    auto series_ok = [&](const std::vector<double>& s) { return s.size() == 1 || s.size() == duration; };
    if (!series_ok(v0) || !series_ok(t_ambient))
      throw ConfigError("v0 / t_ambient must be a constant or one value per step");
  }
};

struct ExogenousSeries {
  std::vector<StepData> steps;
  std::size_t duration() const noexcept { return steps.size(); }
};

/// Reproducible uniform variates from the standard-specified mt19937_64
/// engine; the mapping to [0, 1) uses the top 53 bits so that series are
/// bit-identical across platforms.
class ScenarioRng {
 public:
  explicit ScenarioRng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 engine_;
};

/// Checks the modelling assumption that available generation never exceeds
/// the inverter rating.
inline void check_generation_limits(const FeederModel& model, const ExogenousSeries& s) {
  for (std::size_t t = 0; t < s.steps.size(); ++t)
    for (std::size_t j = 0; j < model.node_count(); ++j) {
      const double pg = s.steps[t].p_g[static_cast<Eigen::Index>(j)];
      if (pg < 0.0) throw ConfigError("negative available generation");
      if (pg == 0.0) continue;
      if (!model.has_inverter(j) || pg > model.inverter(j)->s_max + 1e-12)
        throw ConfigError("available generation at node " + std::to_string(j + 1) + ", step " +
                          std::to_string(t) + " exceeds the inverter rating");
    }
}

/// Draws loads uniformly per step and node (p first, then power factor) and
/// samples the PV bell profiles.
inline ExogenousSeries generate(const ScenarioConfig& cfg, const FeederModel& model) {
  cfg.validate(model);
  const auto n = static_cast<Eigen::Index>(model.node_count());
  ScenarioRng rng(cfg.seed);
  ExogenousSeries out;
  out.steps.reserve(cfg.duration);
  for (std::size_t t = 0; t < cfg.duration; ++t) {
    StepData st;
    st.p_c = Vector::Zero(n);
    st.q_c = Vector::Zero(n);
    st.p_g = Vector::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const LoadRange& lr = cfg.loads[static_cast<std::size_t>(j)];
      const double p = rng.uniform(lr.p_min, lr.p_max);
      const double pf = rng.uniform(lr.pf_min, lr.pf_max);
      st.p_c[j] = p;
      st.q_c[j] = p * std::tan(std::acos(pf));
    }
    const double minute = cfg.start_minute + static_cast<double>(t) * cfg.dt_minutes;
    for (const auto& pv : cfg.pv) {
      const double dt = minute - pv.peak_minute;
      const double mw = pv.peak_mw * std::exp(-dt * dt / (2.0 * pv.width_minutes * pv.width_minutes));
      st.p_g[static_cast<Eigen::Index>(pv.node - 1)] += mw / model.s_base();
    }
    st.v0 = cfg.v0.size() == 1 ? cfg.v0[0] : cfg.v0[t];
    st.t_ambient = cfg.t_ambient.size() == 1 ? cfg.t_ambient[0] : cfg.t_ambient[t];
    out.steps.push_back(std::move(st));
  }
  check_generation_limits(model, out);
  return out;
}

/// Perfect forecast of steps t .. t+H-1. T(0) is left unset.
inline HorizonInputs forecast_slice(const ExogenousSeries& series, std::size_t t, std::size_t horizon) {
  if (horizon == 0) throw DomainError("forecast_slice: horizon must be positive");
  if (t + horizon > series.duration())
    throw DomainError("forecast_slice: horizon runs past the end of the series");
  HorizonInputs in;
  in.steps.assign(series.steps.begin() + static_cast<std::ptrdiff_t>(t),
                  series.steps.begin() + static_cast<std::ptrdiff_t>(t + horizon));
  return in;
}

// ---------------------------------------------------------------------------
// Profile CSV import

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

inline std::vector<std::map<std::string, std::string>> read_csv_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  const auto header = split_csv_line(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw IoError(path.string() + ": row " + std::to_string(rows.size() + 2) + " has " +
                    std::to_string(cells.size()) + " cells, expected " +
                    std::to_string(header.size()));
    std::map<std::string, std::string> rec;
    for (std::size_t i = 0; i < header.size(); ++i) rec[header[i]] = cells[i];
    rows.push_back(std::move(rec));
  }
  return rows;
}

inline double parse_number(const std::map<std::string, std::string>& rec, const std::string& key,
                           const std::filesystem::path& path) {
  const auto it = rec.find(key);
  if (it == rec.end()) throw IoError(path.string() + ": missing column " + key);
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw IoError(path.string() + ": bad number in column " + key + ": '" + it->second + "'");
  }
}

}  // namespace detail

/// Reads a node profile (`t,node,p_c,q_c,p_g`) and a system profile
/// (`t,v0,T_a`); p.u. and degC. Steps are 0-based, nodes 1-based.
inline ExogenousSeries load_profile_csv(const std::filesystem::path& node_csv,
                                        const std::filesystem::path& system_csv,
                                        const FeederModel& model) {
  const auto sys = detail::read_csv_records(system_csv);
  const auto n = static_cast<Eigen::Index>(model.node_count());
  ExogenousSeries out;
  out.steps.resize(sys.size());
  std::vector<bool> seen(sys.size(), false);
  for (const auto& rec : sys) {
    const double tf = detail::parse_number(rec, "t", system_csv);
    if (tf < 0 || tf >= static_cast<double>(sys.size()) || tf != std::floor(tf))
      throw IoError(system_csv.string() + ": step index out of range");
    const auto t = static_cast<std::size_t>(tf);
    if (seen[t]) throw IoError(system_csv.string() + ": duplicate step " + std::to_string(t));
    seen[t] = true;
    StepData& st = out.steps[t];
    st.v0 = detail::parse_number(rec, "v0", system_csv);
    st.t_ambient = detail::parse_number(rec, "T_a", system_csv);
    st.p_c = Vector::Zero(n);
    st.q_c = Vector::Zero(n);
    st.p_g = Vector::Zero(n);
  }
  for (const auto& rec : detail::read_csv_records(node_csv)) {
    const double tf = detail::parse_number(rec, "t", node_csv);
    const double nf = detail::parse_number(rec, "node", node_csv);
    if (tf < 0 || tf >= static_cast<double>(sys.size()) || tf != std::floor(tf))
      throw IoError(node_csv.string() + ": step index out of range");
    if (nf < 1 || nf > static_cast<double>(n) || nf != std::floor(nf))
      throw IoError(node_csv.string() + ": node out of range");
    StepData& st = out.steps[static_cast<std::size_t>(tf)];
    const auto j = static_cast<Eigen::Index>(nf) - 1;
    st.p_c[j] = detail::parse_number(rec, "p_c", node_csv);
    st.q_c[j] = detail::parse_number(rec, "q_c", node_csv);
    st.p_g[j] = detail::parse_number(rec, "p_g", node_csv);
  }
  check_generation_limits(model, out);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment file

/// Self-contained experiment: feeder, thermal parameters and exogenous data
/// (generated from the config or imported from profile CSVs).
struct Scenario {
  FeederModel feeder;
  ThermalParams thermal;
  ScenarioConfig config;
  ExogenousSeries series;
};

/// Calibrated six-node default. Loads are light and the single PV plant at
/// the feeder end is broad enough that the feeder exports power over the
/// whole 10:00-16:00 window, while the uncontrolled run both overheats the
/// transformer and pushes node 6 above 1.05 p.u.
inline FeederModel default_feeder() {
  std::vector<LineSegment> lines(6, LineSegment{0.012, 0.009});
  std::vector<std::optional<InverterSpec>> inv(6);
  inv[5] = InverterSpec{1.0};
  return FeederModel(std::move(lines), std::move(inv), 2.5, 4.8, 0.95, 1.05);
}

inline ScenarioConfig default_scenario_config(std::size_t nodes = 6) {
  ScenarioConfig cfg;
  cfg.seed = 1;
  cfg.duration = 360;
  cfg.dt_minutes = 1.0;
  cfg.start_minute = 600.0;
  cfg.loads.assign(nodes, LoadRange{0.005, 0.02, 0.90, 0.95});
  cfg.pv.push_back(PvProfile{nodes, 2.375, 780.0, 240.0});
  cfg.v0 = {1.01};
  return cfg;
}

inline Scenario default_scenario() {
  Scenario s{default_feeder(), ThermalParams{}, default_scenario_config(), {}};
  s.series = generate(s.config, s.feeder);
  return s;
}

inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j, const FeederModel& model) {
  ScenarioConfig cfg;
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.duration = j.value("duration", cfg.duration);
    cfg.dt_minutes = j.value("dt_minutes", cfg.dt_minutes);
    cfg.start_minute = j.value("start_minute", cfg.start_minute);
    LoadRange common;
    if (j.contains("loads")) {
      const auto& l = j.at("loads");
      common = LoadRange{l.value("p_min", 0.0), l.value("p_max", 0.0), l.value("pf_min", 1.0),
                         l.value("pf_max", 1.0)};
    }
    cfg.loads.assign(model.node_count(), common);
    if (j.contains("loads") && j.at("loads").contains("per_node")) {
      for (const auto& [key, l] : j.at("loads").at("per_node").items()) {
        const std::size_t node = std::stoul(key);
        if (node < 1 || node > model.node_count()) throw ConfigError("load node out of range: " + key);
        cfg.loads[node - 1] = LoadRange{l.value("p_min", common.p_min), l.value("p_max", common.p_max),
                                        l.value("pf_min", common.pf_min), l.value("pf_max", common.pf_max)};
      }
    }
    if (j.contains("pv"))
      for (const auto& p : j.at("pv"))
        cfg.pv.push_back(PvProfile{p.at("node").get<std::size_t>(), p.at("peak_mw").get<double>(),
                                   p.value("peak_minute", 780.0), p.value("width_minutes", 90.0)});
    auto series = [&](const char* key, std::vector<double>& dst) {
      if (!j.contains(key)) return;
      if (j.at(key).is_array())
        dst = j.at(key).get<std::vector<double>>();
      else
        dst = {j.at(key).get<double>()};
    };
    series("v0", cfg.v0);
    series("t_ambient", cfg.t_ambient);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  cfg.validate(model);
  return cfg;
}

inline nlohmann::json to_json(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["duration"] = cfg.duration;
  j["dt_minutes"] = cfg.dt_minutes;
  j["start_minute"] = cfg.start_minute;
  // Loads are written per node so that heterogeneous ranges survive.
  j["loads"] = {{"p_min", cfg.loads.empty() ? 0.0 : cfg.loads[0].p_min},
                {"p_max", cfg.loads.empty() ? 0.0 : cfg.loads[0].p_max},
                {"pf_min", cfg.loads.empty() ? 1.0 : cfg.loads[0].pf_min},
                {"pf_max", cfg.loads.empty() ? 1.0 : cfg.loads[0].pf_max}};
  nlohmann::json per_node = nlohmann::json::object();
  for (std::size_t k = 0; k < cfg.loads.size(); ++k) {
    const auto& l = cfg.loads[k];
    const auto& c = cfg.loads[0];
    if (l.p_min != c.p_min || l.p_max != c.p_max || l.pf_min != c.pf_min || l.pf_max != c.pf_max)
      per_node[std::to_string(k + 1)] = {{"p_min", l.p_min}, {"p_max", l.p_max},
                                         {"pf_min", l.pf_min}, {"pf_max", l.pf_max}};
  }
  if (!per_node.empty()) j["loads"]["per_node"] = per_node;
  j["pv"] = nlohmann::json::array();
  for (const auto& p : cfg.pv)
    j["pv"].push_back({{"node", p.node}, {"peak_mw", p.peak_mw}, {"peak_minute", p.peak_minute},
                       {"width_minutes", p.width_minutes}});
  j["v0"] = cfg.v0.size() == 1 ? nlohmann::json(cfg.v0[0]) : nlohmann::json(cfg.v0);
  j["t_ambient"] =
      cfg.t_ambient.size() == 1 ? nlohmann::json(cfg.t_ambient[0]) : nlohmann::json(cfg.t_ambient);
  return j;
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j = to_json(s.config);
  j["format"] = kScenarioFormat;
  j["feeder"] = to_json(s.feeder);
  j["thermal"] = to_json(s.thermal);
  return j;
}

/// Parses an experiment document. `base_dir` resolves relative profile paths.
inline Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  if (j.contains("format") && j.at("format") != kScenarioFormat)
    throw ConfigError("unsupported scenario format: " + j.at("format").dump());
  FeederModel feeder = j.contains("feeder") ? feeder_from_json(j.at("feeder")) : default_feeder();
  ThermalParams thermal = j.contains("thermal") ? thermal_from_json(j.at("thermal")) : ThermalParams{};
  if (j.contains("profiles")) {
    const auto& p = j.at("profiles");
    const auto node_csv = base_dir / p.at("nodes").get<std::string>();
    const auto sys_csv = base_dir / p.at("system").get<std::string>();
    ExogenousSeries series = load_profile_csv(node_csv, sys_csv, feeder);
    ScenarioConfig cfg;
    cfg.duration = series.duration();
    cfg.loads.assign(feeder.node_count(), LoadRange{});
    return Scenario{std::move(feeder), thermal, cfg, std::move(series)};
  }
  ScenarioConfig cfg = scenario_config_from_json(j, feeder);
  ExogenousSeries series = generate(cfg, feeder);
  return Scenario{std::move(feeder), thermal, std::move(cfg), std::move(series)};
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return scenario_from_json(j, path.parent_path());
}

}  // namespace gridmpc
