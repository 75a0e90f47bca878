#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridmpc/error.hpp"

namespace gridmpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Series impedance of one feeder section, per unit.
struct LineSegment {
  double r = 0.0;
  double x = 0.0;
};

/// PV inverter at a node; apparent power rating in per unit.
struct InverterSpec {
  double s_max = 0.0;
};

/// Radial (chain) feeder: node 0 is the substation, nodes 1..N are loads.
/// Line i (0-based) connects node i to node i+1.
///
/// Every electrical quantity is per unit on (s_base, v_base). The only place
/// that converts to MVA is the transformer thermal boundary.
class FeederModel {
 public:
  FeederModel(std::vector<LineSegment> lines,
              std::vector<std::optional<InverterSpec>> inverters,
              double s_base_mva, double v_base_kv, double v_min, double v_max)
      : lines_(std::move(lines)),
        inverters_(std::move(inverters)),
        s_base_(s_base_mva),
        v_base_(v_base_kv),
        v_min_(v_min),
        v_max_(v_max) {
    if (lines_.empty()) throw ConfigError("feeder needs at least one line");
    if (inverters_.empty()) inverters_.resize(lines_.size());
    if (inverters_.size() != lines_.size())
      throw ConfigError("inverter table must have one entry per node");
    for (std::size_t i = 0; i < lines_.size(); ++i) {
      if (!(lines_[i].r > 0.0) || !(lines_[i].x > 0.0))
        throw ConfigError("line " + std::to_string(i) +
                          ": r and x must be positive");
    }
    for (std::size_t j = 0; j < inverters_.size(); ++j) {
      if (inverters_[j] && !(inverters_[j]->s_max >= 0.0))
        throw ConfigError("inverter at node " + std::to_string(j + 1) +
                          ": s_max must be non-negative");
    }
    if (!(s_base_ > 0.0)) throw ConfigError("s_base must be positive");
    if (!(v_base_ > 0.0)) throw ConfigError("v_base must be positive");
    if (!(v_min_ > 0.0) || !(v_min_ < v_max_))
      throw ConfigError("voltage bounds must satisfy 0 < v_min < v_max");
  }

  std::size_t node_count() const noexcept { return lines_.size(); }
  const std::vector<LineSegment>& lines() const noexcept { return lines_; }
  const std::vector<std::optional<InverterSpec>>& inverters() const noexcept {
    return inverters_;
  }
  /// Inverter at 0-based node index j (node j+1 of the feeder).
  const std::optional<InverterSpec>& inverter(std::size_t j) const {
    return inverters_.at(j);
  }
  bool has_inverter(std::size_t j) const { return inverters_.at(j).has_value(); }
  /// 0-based indices of nodes carrying an inverter, ascending.
  std::vector<std::size_t> inverter_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < inverters_.size(); ++j)
      if (inverters_[j]) out.push_back(j);
    return out;
  }

  double s_base() const noexcept { return s_base_; }
  double v_base() const noexcept { return v_base_; }
  double v_min() const noexcept { return v_min_; }
  double v_max() const noexcept { return v_max_; }

  /// Sending/receiving node of line l (node numbers, substation = 0).
  std::size_t sending_node(std::size_t l) const noexcept { return l; }
  std::size_t receiving_node(std::size_t l) const noexcept { return l + 1; }

  Vector resistances() const {
    Vector r(lines_.size());
    for (std::size_t i = 0; i < lines_.size(); ++i) r[i] = lines_[i].r;
    return r;
  }
  Vector reactances() const {
    Vector x(lines_.size());
    for (std::size_t i = 0; i < lines_.size(); ++i) x[i] = lines_[i].x;
    return x;
  }

 private:
  std::vector<LineSegment> lines_;
  std::vector<std::optional<InverterSpec>> inverters_;
  double s_base_;
  double v_base_;
  double v_min_;
  double v_max_;
};

/// Reduced branch-bus incidence matrix (substation column dropped).
/// A(l, j-1) = +1 if line l leaves node j, -1 if it enters node j.
inline Matrix reduced_incidence(const FeederModel& model) {
  const auto n = static_cast<Eigen::Index>(model.node_count());
  Matrix a = Matrix::Zero(n, n);
  for (Eigen::Index l = 0; l < n; ++l) {
    const auto from = model.sending_node(static_cast<std::size_t>(l));
    const auto to = model.receiving_node(static_cast<std::size_t>(l));
    if (from > 0) a(l, static_cast<Eigen::Index>(from) - 1) = 1.0;
    if (to > 0) a(l, static_cast<Eigen::Index>(to) - 1) = -1.0;
  }
  return a;
}

struct SensitivityMatrices {
  Matrix F;  ///< inverse of the reduced incidence matrix
  Matrix R;  ///< voltage sensitivity to active injections
  Matrix X;  ///< voltage sensitivity to reactive injections
};

/// R = F diag(r) F^T and X = F diag(x) F^T with F = A^{-1}.
inline SensitivityMatrices sensitivity_matrices(const FeederModel& model) {
  const Matrix a = reduced_incidence(model);
  Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible())
    throw ConfigError("reduced incidence matrix is singular");
  SensitivityMatrices out;
  out.F = lu.inverse();
  out.R = out.F * model.resistances().asDiagonal() * out.F.transpose();
  out.X = out.F * model.reactances().asDiagonal() * out.F.transpose();
  return out;
}

/// Parses the feeder section of an experiment file:
/// {"s_base_mva", "v_base_kv", "v_min", "v_max", "lines": [{"r","x"}...],
///  "inverters": {"<1-based node>": {"s_max"}}}
inline FeederModel feeder_from_json(const nlohmann::json& j) {
  try {
    std::vector<LineSegment> lines;
    for (const auto& l : j.at("lines"))
      lines.push_back({l.at("r").get<double>(), l.at("x").get<double>()});
    std::vector<std::optional<InverterSpec>> inverters(lines.size());
    if (j.contains("inverters")) {
      for (const auto& [key, spec] : j.at("inverters").items()) {
        std::size_t pos = 0;
        const long node = std::stol(key, &pos);
        if (pos != key.size() || node < 1 ||
            static_cast<std::size_t>(node) > lines.size())
          throw ConfigError("inverter node key out of range: " + key);
        inverters[static_cast<std::size_t>(node - 1)] =
            InverterSpec{spec.at("s_max").get<double>()};
      }
    }
    return FeederModel(std::move(lines), std::move(inverters),
                       j.value("s_base_mva", 2.5), j.value("v_base_kv", 4.8),
                       j.value("v_min", 0.95), j.value("v_max", 1.05));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("feeder: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("feeder: inverter keys must be node numbers");
  }
}

inline nlohmann::json to_json(const FeederModel& m) {
  nlohmann::json j;
  j["s_base_mva"] = m.s_base();
  j["v_base_kv"] = m.v_base();
  j["v_min"] = m.v_min();
  j["v_max"] = m.v_max();
  j["lines"] = nlohmann::json::array();
  for (const auto& l : m.lines()) j["lines"].push_back({{"r", l.r}, {"x", l.x}});
  j["inverters"] = nlohmann::json::object();
  for (std::size_t k = 0; k < m.node_count(); ++k)
    if (m.inverter(k))
      j["inverters"][std::to_string(k + 1)] = {{"s_max", m.inverter(k)->s_max}};
  return j;
}

}  // namespace gridmpc
