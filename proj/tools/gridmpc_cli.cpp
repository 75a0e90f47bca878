// Command-line front end: baseline and closed-loop runs, parameter sweeps
// and the relaxation tightness report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gridmpc/conic/kkt.hpp"
#include "gridmpc/harness.hpp"

namespace fs = std::filesystem;
using namespace gridmpc;

namespace {

struct Common {
  std::string scenario;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  bool plots = false;
  bool timing = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("scenario", c.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
  sub->add_option("--seed", c.seed, "Override the scenario's random seed");
  sub->add_flag("--plots", c.plots, "Write SVG figures");
  sub->add_flag("--timing", c.timing, "Include wall-clock solve times in CSV output");
}

Scenario load(const Common& c) {
  Scenario sc = load_scenario(c.scenario);
  if (c.seed) {
    if (sc.config.pv.empty() && sc.config.loads.empty())
      throw ConfigError("--seed has no effect on a scenario read from profile CSVs");
    sc.config.seed = *c.seed;
    sc.series = generate(sc.config, sc.feeder);
  }
  fs::create_directories(c.out);
  return sc;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  os << j.dump(2) << "\n";
}

void print_summary(const std::string& what, const RunSummary& s) {
  std::printf("%s: curtailment %.4f %%, max T %.4f C, voltage [%.5f, %.5f] p.u., "
              "violation steps %zu (over-V %zu, under-V %zu, over-T %zu), fallbacks %zu\n",
              what.c_str(), s.total_curtailment, s.max_temperature, s.min_voltage, s.max_voltage,
              s.violation_steps, s.overvoltage_steps, s.undervoltage_steps, s.overtemperature_steps,
              s.fallback_steps);
}

void write_run(const Common& c, const Scenario& sc, const RunResult& r, const std::string& stem) {
  const fs::path dir(c.out);
  write_trace(dir / (stem + "_trace.csv"), r.trace, trace_schema(sc.feeder, c.timing));
  nlohmann::json j = to_json(r.summary);
  if (!c.timing) j.erase("mean_solve_time");
  j["warnings"] = r.warnings;
  if (r.aborted) j["aborted"] = *r.aborted;
  write_json(dir / (stem + "_summary.json"), j);
  if (c.plots) render_plots(r.trace, sc.feeder, sc.thermal, dir, stem + "_");
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (r.aborted) throw SolverError("plant power flow failed at " + *r.aborted);
}

template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find(',', start), s.size());
    const std::string item = s.substr(start, end - start);
    if (!item.empty()) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != item.size()) throw ConfigError("bad list value: '" + item + "'");
      if constexpr (std::is_integral_v<T>) {
        if (v < 1 || v != static_cast<double>(static_cast<T>(v)))
          throw ConfigError("expected a positive integer: '" + item + "'");
      }
      out.push_back(static_cast<T>(v));
    }
    start = end + 1;
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-predictive PV curtailment and transformer temperature control"};
  app.require_subcommand(1);

  Common c;
  double beta = 1e5;
  std::size_t horizon = 1;
  std::string objective = "curtailment_plus_q";
  std::string values;
  std::string dump;

  auto* baseline = app.add_subcommand("baseline", "Simulate without control");
  add_common(baseline, c);

  auto* run = app.add_subcommand("run", "Closed-loop simulation with the controller");
  add_common(run, c);
  run->add_option("--beta", beta, "Curtailment weight")->capture_default_str();
  run->add_option("--horizon", horizon, "Prediction horizon in steps")->capture_default_str();
  run->add_option("--objective", objective, "curtailment_only | curtailment_plus_q")
      ->check(CLI::IsMember({"curtailment_only", "curtailment_plus_q"}))
      ->capture_default_str();
  run->add_option("--dump-problem", dump, "Write the first step's conic problem as JSON");

  auto* sh = app.add_subcommand("sweep-horizon", "Curtailment and solve time against horizon");
  add_common(sh, c);
  sh->add_option("--values", values, "Comma-separated horizons")->required();
  sh->add_option("--objective", objective, "curtailment_only | curtailment_plus_q")
      ->check(CLI::IsMember({"curtailment_only", "curtailment_plus_q"}));

  auto* sb = app.add_subcommand("sweep-beta", "Curtailment against the curtailment weight");
  add_common(sb, c);
  sb->add_option("--values", values, "Comma-separated weights")->required();
  sb->add_option("--horizon", horizon, "Prediction horizon in steps")->capture_default_str();

  auto* ct = app.add_subcommand("check-tightness", "Per-solve relaxation tightness report");
  add_common(ct, c);
  ct->add_option("--beta", beta, "Curtailment weight")->capture_default_str();
  ct->add_option("--horizon", horizon, "Prediction horizon in steps")->capture_default_str();
  ct->add_option("--objective", objective, "curtailment_only | curtailment_plus_q")
      ->check(CLI::IsMember({"curtailment_only", "curtailment_plus_q"}));

  // Sweeps default to the curtailment-only objective.
  sh->preparse_callback([&](std::size_t) { objective = "curtailment_only"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    MpcConfig cfg;
    cfg.beta = beta;
    cfg.horizon = horizon;
    cfg.objective = objective_mode_from_string(objective);

    if (baseline->parsed()) {
      const Scenario sc = load(c);
      const RunResult r = run_baseline(sc);
      write_run(c, sc, r, "baseline");
      print_summary("baseline", r.summary);
      return 0;
    }
    if (run->parsed()) {
      const Scenario sc = load(c);
      if (!dump.empty()) {
        HorizonInputs in = forecast_slice(sc.series, 0, std::min(cfg.horizon, sc.series.duration()));
        in.t_initial = sc.thermal.t0;
        dump_problem(dump, build_problem(sc.feeder, sc.thermal, cfg, in).conic);
      }
      const RunResult r = run_mpc(sc, cfg);
      write_run(c, sc, r, "mpc");
      print_summary("mpc", r.summary);
      return r.summary.violation_steps > 0 ? 2 : 0;
    }
    if (sh->parsed()) {
      const Scenario sc = load(c);
      const auto hs = parse_list<std::size_t>(values);
      const auto pts = sweep_horizon(sc, hs, cfg.objective);
      write_sweep(fs::path(c.out) / "sweep_horizon.csv", "horizon", pts, c.timing);
      if (c.plots) render_sweep_plot(pts, "horizon", false, fs::path(c.out) / "sweep_horizon.svg");
      for (const auto& p : pts)
        std::printf("H=%-5g variables=%-6zu curtailment=%.4f %%  mean solve=%.4f s\n", p.parameter,
                    p.variable_count, p.summary.total_curtailment, p.summary.mean_solve_time);
      return 0;
    }
    if (sb->parsed()) {
      const Scenario sc = load(c);
      const auto bs = parse_list<double>(values);
      const auto pts = sweep_beta(sc, bs, cfg.horizon);
      write_sweep(fs::path(c.out) / "sweep_beta.csv", "beta", pts, c.timing);
      if (c.plots) render_sweep_plot(pts, "beta", true, fs::path(c.out) / "sweep_beta.svg");
      for (const auto& p : pts)
        std::printf("beta=%-8g curtailment=%.4f %%\n", p.parameter, p.summary.total_curtailment);
      return 0;
    }
    if (ct->parsed()) {
      const Scenario sc = load(c);
      std::size_t applicable = 0, counterexamples = 0;
      double worst_kkt = 0.0;
      std::printf("%5s %-10s %-10s %-6s %-6s %12s %14s %10s  %s\n", "t", "status", "applicable",
                  "h*", "tight", "max_rho", "lambda_e(0)", "kkt", "reason");
      auto observer = [&](std::size_t t, const MpcProblem& mp, const conic::ConicSolution& sol,
                          const ControlPlan* plan) {
        if (plan == nullptr) {
          std::printf("%5zu %-10s (no plan)\n", t, conic::to_string(sol.status));
          return;
        }
        const TightnessReport rep = tightness_report(mp, *plan, sc.feeder);
        const double kkt = conic::kkt_residuals(mp.conic, sol).max_violation();
        worst_kkt = std::max(worst_kkt, kkt);
        double max_rho = 0.0;
        for (double r : rep.rho) max_rho = std::max(max_rho, r);
        const bool ok = rep.tight_through_h_star();
        if (rep.theorem_applicable) {
          ++applicable;
          if (!ok) ++counterexamples;
        }
        std::printf("%5zu %-10s %-10s %-6s %-6s %12.3e %14.6e %10.2e  %s\n", t,
                    conic::to_string(sol.status), rep.theorem_applicable ? "yes" : "no",
                    rep.h_star ? std::to_string(*rep.h_star).c_str() : "-",
                    (rep.theorem_applicable ? ok : rep.all_tight()) ? "yes" : "no", max_rho,
                    rep.lambda_e.empty() ? 0.0 : rep.lambda_e[0], kkt, rep.reason.c_str());
      };
      const RunResult r = run_mpc(sc, cfg, nullptr, observer);
      std::printf("theorem-applicable solves: %zu, counterexamples: %zu, worst KKT residual: %.3e\n",
                  applicable, counterexamples, worst_kkt);
      if (r.aborted) throw SolverError("plant power flow failed at " + *r.aborted);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
