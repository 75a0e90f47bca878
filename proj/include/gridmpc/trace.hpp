#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gridmpc/error.hpp"
#include "gridmpc/feeder.hpp"

namespace gridmpc {

/// One simulated step. Plant quantities come from the AC power flow; "model"
/// quantities are the linear prediction for the same applied injections.
struct TraceRow {
  std::size_t t = 0;
  Vector v_plant;
  Vector v_model;
  double p0 = 0.0, q0 = 0.0;            ///< AC head flow, p.u., export positive
  double p_total = 0.0, q_total = 0.0;  ///< linear-model totals, p.u.
  double t_plant = 0.0;                 ///< plant temperature after the step
  double t_model = 0.0;                 ///< exact thermal model on the linear totals
  /// Controller's relaxed prediction of the same temperature (NaN without a solve).
  double t_mpc_pred = std::numeric_limits<double>::quiet_NaN();
  Vector p_g;                           ///< available PV, per inverter node
  Vector p_cr;                          ///< dispatched curtailment, per inverter node
  Vector q_g;                           ///< dispatched reactive output, per inverter node
  double solve_time = 0.0;
  int solve_iterations = 0;
  std::string solver_status = "none";
  bool tight = false;
  bool theorem_applicable = false;
  bool overvoltage = false;
  bool undervoltage = false;
  bool overtemperature = false;
  bool clamped = false;
  bool fallback = false;
};

using Trace = std::vector<TraceRow>;

/// Column layout of a trace file: node count and the 1-based inverter nodes.
struct TraceSchema {
  std::size_t nodes = 0;
  std::vector<std::size_t> pv_nodes;
  bool timing = false;  ///< include the wall-clock solve_time column

  std::vector<std::string> header() const {
    std::vector<std::string> h{"t"};
    for (std::size_t j = 1; j <= nodes; ++j) h.push_back("v_plant_" + std::to_string(j));
    for (std::size_t j = 1; j <= nodes; ++j) h.push_back("v_model_" + std::to_string(j));
    for (const char* c : {"p0", "q0", "p_total", "q_total", "t_plant", "t_model", "t_mpc_pred"})
      h.emplace_back(c);
    for (std::size_t j : pv_nodes) {
      h.push_back("p_g_" + std::to_string(j));
      h.push_back("p_cr_" + std::to_string(j));
      h.push_back("q_g_" + std::to_string(j));
    }
    if (timing) h.emplace_back("solve_time");
    for (const char* c : {"solve_iterations", "solver_status", "tight", "theorem_applicable",
                          "overvoltage", "undervoltage", "overtemperature", "clamped", "fallback"})
      h.emplace_back(c);
    return h;
  }
};

inline TraceSchema trace_schema(const FeederModel& model, bool timing = false) {
  TraceSchema s;
  s.nodes = model.node_count();
  for (std::size_t j : model.inverter_nodes()) s.pv_nodes.push_back(j + 1);
  s.timing = timing;
  return s;
}

namespace detail {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Splits one CSV record; quoted fields may contain separators and doubled quotes.
inline std::vector<std::string> parse_csv_record(const std::string& line) {
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
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

}  // namespace detail

inline void write_trace(std::ostream& os, const Trace& trace, const TraceSchema& schema) {
  const auto header = schema.header();
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\r\n";
  const std::size_t npv = schema.pv_nodes.size();
  for (const TraceRow& r : trace) {
    if (static_cast<std::size_t>(r.v_plant.size()) != schema.nodes ||
        static_cast<std::size_t>(r.v_model.size()) != schema.nodes ||
        static_cast<std::size_t>(r.p_g.size()) != npv)
      throw DomainError("write_trace: row " + std::to_string(r.t) + " does not match the schema");
    std::vector<std::string> c;
    c.push_back(std::to_string(r.t));
    for (Eigen::Index j = 0; j < r.v_plant.size(); ++j) c.push_back(detail::format_double(r.v_plant[j]));
    for (Eigen::Index j = 0; j < r.v_model.size(); ++j) c.push_back(detail::format_double(r.v_model[j]));
    for (double v : {r.p0, r.q0, r.p_total, r.q_total, r.t_plant, r.t_model, r.t_mpc_pred})
      c.push_back(detail::format_double(v));
    for (std::size_t k = 0; k < npv; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      c.push_back(detail::format_double(r.p_g[kk]));
      c.push_back(detail::format_double(r.p_cr[kk]));
      c.push_back(detail::format_double(r.q_g[kk]));
    }
    if (schema.timing) c.push_back(detail::format_double(r.solve_time));
    c.push_back(std::to_string(r.solve_iterations));
    c.push_back(detail::csv_quote(r.solver_status));
    for (bool b : {r.tight, r.theorem_applicable, r.overvoltage, r.undervoltage, r.overtemperature,
                   r.clamped, r.fallback})
      c.emplace_back(b ? "1" : "0");
    for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
    os << "\r\n";
  }
}

inline void write_trace(const std::filesystem::path& path, const Trace& trace, const TraceSchema& schema) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write trace " + path.string());
  write_trace(os, trace, schema);
  if (!os) throw IoError("error writing trace " + path.string());
}

struct TraceFile {
  TraceSchema schema;
  Trace rows;
};

/// Parses a file produced by write_trace; the schema is recovered from the header.
inline TraceFile read_trace(std::istream& is, const std::string& where = "trace") {
  TraceFile out;
  std::string line;
  if (!std::getline(is, line)) throw IoError(where + ": missing header");
  const auto header = detail::parse_csv_record(line);
  for (const auto& h : header) {
    if (h.rfind("v_plant_", 0) == 0) ++out.schema.nodes;
    if (h.rfind("p_g_", 0) == 0) out.schema.pv_nodes.push_back(std::stoul(h.substr(4)));
    if (h == "solve_time") out.schema.timing = true;
  }
  if (out.schema.header() != header) throw IoError(where + ": unrecognized trace header");

  const auto n = static_cast<Eigen::Index>(out.schema.nodes);
  const auto npv = static_cast<Eigen::Index>(out.schema.pv_nodes.size());
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto c = detail::parse_csv_record(line);
    if (c.size() != header.size())
      throw IoError(where + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(header.size()) + " fields, got " + std::to_string(c.size()));
    std::size_t i = 0;
    auto num = [&]() {
      const std::string& s = c[i++];
      try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw IoError(where + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
      }
    };
    TraceRow r;
    r.t = static_cast<std::size_t>(num());
    r.v_plant.resize(n);
    r.v_model.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) r.v_plant[j] = num();
    for (Eigen::Index j = 0; j < n; ++j) r.v_model[j] = num();
    r.p0 = num();
    r.q0 = num();
    r.p_total = num();
    r.q_total = num();
    r.t_plant = num();
    r.t_model = num();
    r.t_mpc_pred = num();
    r.p_g.resize(npv);
    r.p_cr.resize(npv);
    r.q_g.resize(npv);
    for (Eigen::Index k = 0; k < npv; ++k) {
      r.p_g[k] = num();
      r.p_cr[k] = num();
      r.q_g[k] = num();
    }
    if (out.schema.timing) r.solve_time = num();
    r.solve_iterations = static_cast<int>(num());
    r.solver_status = c[i++];
    for (bool* b : {&r.tight, &r.theorem_applicable, &r.overvoltage, &r.undervoltage,
                    &r.overtemperature, &r.clamped, &r.fallback})
      *b = num() != 0.0;
    out.rows.push_back(std::move(r));
  }
  return out;
}

inline TraceFile read_trace(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open trace " + path.string());
  return read_trace(is, path.string());
}

}  // namespace gridmpc
