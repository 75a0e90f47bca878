#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridmpc/conic/hsde_solver.hpp"
#include "gridmpc/conic/problem.hpp"
#include "gridmpc/feeder.hpp"
#include "gridmpc/mpc.hpp"
#include "gridmpc/plant.hpp"
#include "gridmpc/plots.hpp"
#include "gridmpc/scenario.hpp"
#include "gridmpc/tightness.hpp"
#include "gridmpc/trace.hpp"

namespace gridmpc {

struct RunSummary {
  double total_curtailment = 0.0;  ///< percent
  double max_temperature = 0.0;
  double max_voltage = 0.0;
  double min_voltage = 0.0;
  std::size_t violation_steps = 0;
  std::size_t overvoltage_steps = 0;
  std::size_t undervoltage_steps = 0;
  std::size_t overtemperature_steps = 0;
  std::size_t fallback_steps = 0;
  std::size_t solves = 0;
  double mean_solve_time = 0.0;
  std::size_t applicable_solves = 0;
  std::size_t applicable_tight = 0;

  /// Share of theorem-applicable solves that were tight; NaN when there were none.
  double tightness_rate() const {
    return applicable_solves == 0 ? std::numeric_limits<double>::quiet_NaN()
                                  : static_cast<double>(applicable_tight) /
                                        static_cast<double>(applicable_solves);
  }
};

struct RunResult {
  Trace trace;
  RunSummary summary;
  std::vector<std::string> warnings;
  /// Set when the AC plant failed to converge; the trace stops before that step.
  std::optional<std::string> aborted;
};

/// Called after every controller solve (before dispatch). `plan` is null when
/// the solve failed and the fallback was used.
using SolveObserver = std::function<void(std::size_t t, const MpcProblem&, const conic::ConicSolution&,
                                         const ControlPlan*)>;

/// Number of (t, j) pairs with available generation above 1e-6 p.u.
inline std::size_t curtailment_pairs(const Trace& trace) {
  std::size_t n = 0;
  for (const auto& r : trace)
    for (Eigen::Index k = 0; k < r.p_g.size(); ++k)
      if (r.p_g[k] > 1e-6) ++n;
  return n;
}

/// Mean of p_cr / p_g over pairs with available generation, in percent.
inline double total_curtailment(const Trace& trace, std::string* warning = nullptr) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& r : trace)
    for (Eigen::Index k = 0; k < r.p_g.size(); ++k)
      if (r.p_g[k] > 1e-6) {
        acc += r.p_cr[k] / r.p_g[k];
        ++n;
      }
  if (n == 0) {
    if (warning) *warning = "no steps with available generation; curtailment reported as 0";
    return 0.0;
  }
  return 100.0 * acc / static_cast<double>(n);
}

inline RunSummary summarize(const Trace& trace) {
  RunSummary s;
  s.total_curtailment = total_curtailment(trace);
  s.max_temperature = -std::numeric_limits<double>::infinity();
  s.max_voltage = -std::numeric_limits<double>::infinity();
  s.min_voltage = std::numeric_limits<double>::infinity();
  double time = 0.0;
  for (const auto& r : trace) {
    s.max_temperature = std::max(s.max_temperature, r.t_plant);
    s.max_voltage = std::max(s.max_voltage, r.v_plant.maxCoeff());
    s.min_voltage = std::min(s.min_voltage, r.v_plant.minCoeff());
    s.overvoltage_steps += r.overvoltage;
    s.undervoltage_steps += r.undervoltage;
    s.overtemperature_steps += r.overtemperature;
    s.violation_steps += (r.overvoltage || r.undervoltage || r.overtemperature);
    s.fallback_steps += r.fallback;
    if (r.solver_status != "none") {
      ++s.solves;
      time += r.solve_time;
    }
    if (r.theorem_applicable) {
      ++s.applicable_solves;
      s.applicable_tight += r.tight;
    }
  }
  if (s.solves) s.mean_solve_time = time / static_cast<double>(s.solves);
  return s;
}

inline ControlDecision zero_decision(std::size_t n) {
  return {Vector::Zero(static_cast<Eigen::Index>(n)), Vector::Zero(static_cast<Eigen::Index>(n))};
}

/// Uncontrolled operation: no curtailment and no reactive support.
inline RunResult run_baseline(const Scenario& sc) {
  const SensitivityMatrices sens = sensitivity_matrices(sc.feeder);
  RunResult out;
  PlantState state;
  state.temperature = sc.thermal.t0;
  state.p_cr = Vector::Zero(static_cast<Eigen::Index>(sc.feeder.node_count()));
  state.q_g = state.p_cr;
  for (std::size_t t = 0; t < sc.series.duration(); ++t) {
    PlantStepResult step;
    try {
      step = plant_step(state, sc.feeder, sens, sc.thermal, zero_decision(sc.feeder.node_count()),
                        sc.series.steps[t]);
    } catch (const SolverError& e) {
      out.aborted = "t=" + std::to_string(t) + ": " + e.what();
      break;
    }
    state = step.state;
    out.trace.push_back(std::move(step.row));
  }
  out.summary = summarize(out.trace);
  return out;
}

/// Closed loop: at every step the controller solves the relaxed horizon
/// problem from the measured temperature and dispatches the first setpoints.
/// The horizon shrinks near the end of the series. A failed solve falls back
/// to full curtailment with zero reactive output.
inline RunResult run_mpc(const Scenario& sc, const MpcConfig& cfg,
                         const conic::ConicBackend* backend = nullptr,
                         const SolveObserver& observer = {}) {
  cfg.validate();
  const conic::HsdeSolver default_backend;
  if (backend == nullptr) backend = &default_backend;
  const SensitivityMatrices sens = sensitivity_matrices(sc.feeder);
  const std::size_t n = sc.feeder.node_count();
  RunResult out;
  PlantState state;
  state.temperature = sc.thermal.t0;
  state.p_cr = Vector::Zero(static_cast<Eigen::Index>(n));
  state.q_g = state.p_cr;

  for (std::size_t t = 0; t < sc.series.duration(); ++t) {
    const std::size_t horizon = std::min(cfg.horizon, sc.series.duration() - t);
    HorizonInputs in = forecast_slice(sc.series, t, horizon);
    in.t_initial = state.temperature;
    const MpcProblem mp = build_problem(sc.feeder, sc.thermal, cfg, in, &sens);
    const conic::ConicSolution sol = backend->solve(mp.conic, cfg.tolerances);

    ControlDecision d;
    std::optional<ControlPlan> plan;
    std::optional<TightnessReport> report;
    std::string failure;
    try {
      plan = extract_plan(mp, sol);
      report = tightness_report(mp, *plan, sc.feeder);
      d = {plan->p_cr[0], plan->q_g[0]};
    } catch (const SolverError& e) {
      failure = e.what();
      d = {sc.series.steps[t].p_g, Vector::Zero(static_cast<Eigen::Index>(n))};
      for (std::size_t j = 0; j < n; ++j)
        if (!sc.feeder.has_inverter(j)) d.p_cr[static_cast<Eigen::Index>(j)] = 0.0;
    }
    if (observer) observer(t, mp, sol, plan ? &*plan : nullptr);

    PlantStepResult step;
    try {
      step = plant_step(state, sc.feeder, sens, sc.thermal, d, sc.series.steps[t]);
    } catch (const SolverError& e) {
      out.aborted = "t=" + std::to_string(t) + ": " + e.what();
      break;
    }
    state = step.state;
    TraceRow& row = step.row;
    row.solve_time = sol.solve_time;
    row.solve_iterations = sol.iterations;
    row.solver_status = conic::to_string(sol.status);
    if (plan) {
      row.t_mpc_pred = plan->t_next[0];
      row.theorem_applicable = report->theorem_applicable;
      row.tight = report->theorem_applicable ? report->tight_through_h_star() : report->all_tight();
    } else {
      row.fallback = true;
      out.warnings.push_back("t=" + std::to_string(t) + ": " + failure + "; full curtailment applied");
    }
    out.trace.push_back(std::move(row));
  }
  out.summary = summarize(out.trace);
  return out;
}

struct SweepPoint {
  double parameter = 0.0;  ///< horizon or beta
  std::size_t variable_count = 0;
  RunSummary summary;
};

/// Runs `task` for every entry concurrently; results keep the input order.
template <typename T, typename F>
std::vector<SweepPoint> run_concurrently(const std::vector<T>& values, F task) {
  std::vector<std::future<SweepPoint>> futures;
  futures.reserve(values.size());
  for (const T& v : values) futures.push_back(std::async(std::launch::async, task, v));
  std::vector<SweepPoint> out;
  out.reserve(values.size());
  for (auto& f : futures) out.push_back(f.get());
  return out;
}

inline std::vector<SweepPoint> sweep_horizon(const Scenario& sc, const std::vector<std::size_t>& horizons,
                                             ObjectiveMode mode = ObjectiveMode::CurtailmentOnly,
                                             bool concurrent = true, const SolveObserver& observer = {}) {
  // A concurrent sweep calls the observer from several threads.
  auto task = [&sc, mode, &observer](std::size_t h) {
    MpcConfig cfg;
    cfg.horizon = h;
    cfg.objective = mode;
    SweepPoint p;
    p.parameter = static_cast<double>(h);
    p.variable_count = mpc_variable_count(sc.feeder.node_count(), h);
    p.summary = run_mpc(sc, cfg, nullptr, observer).summary;
    return p;
  };
  if (concurrent) return run_concurrently(horizons, task);
  std::vector<SweepPoint> out;
  for (std::size_t h : horizons) out.push_back(task(h));
  return out;
}

inline std::vector<SweepPoint> sweep_beta(const Scenario& sc, const std::vector<double>& betas,
                                          std::size_t horizon = 1, bool concurrent = true,
                                          const SolveObserver& observer = {}) {
  for (double b : betas)
    if (!(b >= 0.0)) throw ConfigError("beta values must be >= 0");
  auto task = [&sc, horizon, &observer](double beta) {
    MpcConfig cfg;
    cfg.horizon = horizon;
    cfg.beta = beta;
    cfg.objective = ObjectiveMode::CurtailmentPlusQ;
    SweepPoint p;
    p.parameter = beta;
    p.variable_count = mpc_variable_count(sc.feeder.node_count(), horizon);
    p.summary = run_mpc(sc, cfg, nullptr, observer).summary;
    return p;
  };
  if (concurrent) return run_concurrently(betas, task);
  std::vector<SweepPoint> out;
  for (double b : betas) out.push_back(task(b));
  return out;
}

inline void write_sweep(const std::filesystem::path& path, const std::string& parameter,
                        const std::vector<SweepPoint>& points, bool timing) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << parameter << ",variable_count,total_curtailment,max_temperature,max_voltage,min_voltage,"
     << "violation_steps,fallback_steps" << (timing ? ",mean_solve_time" : "") << "\r\n";
  for (const auto& p : points) {
    const RunSummary& s = p.summary;
    os << detail::format_double(p.parameter) << "," << p.variable_count << ","
       << detail::format_double(s.total_curtailment) << "," << detail::format_double(s.max_temperature)
       << "," << detail::format_double(s.max_voltage) << "," << detail::format_double(s.min_voltage)
       << "," << s.violation_steps << "," << s.fallback_steps;
    if (timing) os << "," << detail::format_double(s.mean_solve_time);
    os << "\r\n";
  }
  if (!os) throw IoError("error writing " + path.string());
}

inline nlohmann::json to_json(const RunSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"total_curtailment_percent", s.total_curtailment},
          {"max_temperature", s.max_temperature},
          {"max_voltage", s.max_voltage},
          {"min_voltage", s.min_voltage},
          {"violation_steps", s.violation_steps},
          {"overvoltage_steps", s.overvoltage_steps},
          {"undervoltage_steps", s.undervoltage_steps},
          {"overtemperature_steps", s.overtemperature_steps},
          {"fallback_steps", s.fallback_steps},
          {"solves", s.solves},
          {"mean_solve_time", s.mean_solve_time},
          {"theorem_applicable_solves", s.applicable_solves},
          {"tightness_rate", num(s.tightness_rate())}};
}

/// Five SVG figures for one run: plant and model voltages, temperature, head
/// flow, curtailment and reactive setpoints.
inline std::vector<std::filesystem::path> render_plots(const Trace& trace, const FeederModel& model,
                                                       const ThermalParams& thermal,
                                                       const std::filesystem::path& dir,
                                                       const std::string& prefix = "") {
  std::filesystem::create_directories(dir);
  std::vector<double> time;
  for (const auto& r : trace) time.push_back(static_cast<double>(r.t));
  auto column = [&](auto get) {
    std::vector<double> y;
    for (const auto& r : trace) y.push_back(get(r));
    return y;
  };
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const plot::Chart& c) {
    const auto p = dir / (prefix + name);
    plot::write_svg(p, c);
    written.push_back(p);
  };

  plot::Chart v{"Node voltages", "step (min)", "voltage (p.u.)", {}, {}, false};
  for (std::size_t j = 0; j < model.node_count(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    v.series.push_back({"node " + std::to_string(j + 1), time,
                        column([&](const TraceRow& r) { return r.v_plant[jj]; })});
  }
  const auto last = static_cast<Eigen::Index>(model.node_count() - 1);
  v.series.push_back({"node " + std::to_string(model.node_count()) + " (linear)", time,
                      column([&](const TraceRow& r) { return r.v_model[last]; })});
  v.hlines = {{"v_max", model.v_max()}, {"v_min", model.v_min()}};
  emit("voltage.svg", v);

  plot::Chart t{"Transformer hot-spot temperature", "step (min)", "temperature (C)", {}, {}, false};
  t.series.push_back({"plant", time, column([](const TraceRow& r) { return r.t_plant; })});
  t.series.push_back({"linear model", time, column([](const TraceRow& r) { return r.t_model; })});
  t.series.push_back({"controller prediction", time, column([](const TraceRow& r) { return r.t_mpc_pred; })});
  t.hlines = {{"T_max", thermal.t_max}};
  emit("temperature.svg", t);

  plot::Chart f{"Head-of-feeder flow", "step (min)", "power (p.u.)", {}, {}, false};
  f.series.push_back({"P0 (AC)", time, column([](const TraceRow& r) { return r.p0; })});
  f.series.push_back({"Q0 (AC)", time, column([](const TraceRow& r) { return r.q0; })});
  f.series.push_back({"P_total (linear)", time, column([](const TraceRow& r) { return r.p_total; })});
  f.series.push_back({"Q_total (linear)", time, column([](const TraceRow& r) { return r.q_total; })});
  emit("flow.svg", f);

  const auto pv = model.inverter_nodes();
  plot::Chart c{"PV availability and curtailment", "step (min)", "active power (p.u.)", {}, {}, false};
  plot::Chart q{"Inverter reactive output", "step (min)", "reactive power (p.u.)", {}, {}, false};
  for (std::size_t k = 0; k < pv.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const std::string node = std::to_string(pv[k] + 1);
    c.series.push_back({"p_g node " + node, time, column([&](const TraceRow& r) { return r.p_g[kk]; })});
    c.series.push_back({"p_cr node " + node, time, column([&](const TraceRow& r) { return r.p_cr[kk]; })});
    q.series.push_back({"q_g node " + node, time, column([&](const TraceRow& r) { return r.q_g[kk]; })});
  }
  emit("curtailment.svg", c);
  emit("reactive.svg", q);
  return written;
}

inline std::filesystem::path render_sweep_plot(const std::vector<SweepPoint>& points,
                                               const std::string& parameter, bool log_x,
                                               const std::filesystem::path& path) {
  plot::Chart c{"Total PV curtailment vs " + parameter, parameter, "total curtailment (%)", {}, {}, log_x};
  plot::Series s{"curtailment", {}, {}, true};
  for (const auto& p : points) {
    if (log_x && !(p.parameter > 0.0)) continue;
    s.x.push_back(p.parameter);
    s.y.push_back(p.summary.total_curtailment);
  }
  c.series.push_back(std::move(s));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  plot::write_svg(path, c);
  return path;
}

/// Coordinate-triplet dump of a conic problem for reproduction in other solvers.
inline nlohmann::json problem_to_json(const conic::ConicProblem& p) {
  auto triplets = [](const conic::SparseMatrix& m) {
    nlohmann::json t = nlohmann::json::array();
    for (conic::Index c = 0; c < m.outerSize(); ++c)
      for (conic::SparseMatrix::InnerIterator it(m, c); it; ++it)
        t.push_back({it.row(), it.col(), it.value()});
    return t;
  };
  auto vec = [](const conic::Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["form"] = "min 1/2 x'diag(quad)x + linear'x s.t. eq_matrix x = eq_rhs, cone_rhs - cone_matrix x in K";
  j["variables"] = p.var_names;
  j["quad"] = vec(p.quad);
  j["linear"] = vec(p.linear);
  j["eq"] = {{"rows", p.num_eq()}, {"triplets", triplets(p.eq_matrix)}, {"rhs", vec(p.eq_rhs)},
             {"names", p.eq_names}};
  j["cone"] = {{"rows", p.num_cone_rows()},
               {"triplets", triplets(p.cone_matrix)},
               {"rhs", vec(p.cone_rhs)},
               {"orthant_dim", p.orthant_dim},
               {"soc_dims", p.soc_dims},
               {"orthant_names", p.orthant_names},
               {"soc_names", p.soc_names}};
  return j;
}

inline void dump_problem(const std::filesystem::path& path, const conic::ConicProblem& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << problem_to_json(p).dump(1) << "\n";
}

}  // namespace gridmpc
