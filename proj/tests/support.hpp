#pragma once

#include <optional>
#include <random>
#include <vector>

#include "gridmpc/feeder.hpp"

namespace gridmpc::test {

inline FeederModel chain(std::vector<double> r, std::vector<double> x,
                         std::vector<std::optional<InverterSpec>> inv = {}, double s_base = 2.5,
                         double v_min = 0.95, double v_max = 1.05) {
  std::vector<LineSegment> lines;
  for (std::size_t i = 0; i < r.size(); ++i) lines.push_back({r[i], x[i]});
  return FeederModel(std::move(lines), std::move(inv), s_base, 4.8, v_min, v_max);
}

inline FeederModel random_chain(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.001, 0.2);
  std::vector<double> r(n), x(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = u(rng);
    x[i] = u(rng);
  }
  return chain(r, x);
}

/// Summed value on the common part of the substation-to-j and substation-to-k
/// paths, found by walking parent pointers (node i's parent is i - 1, through
/// line i - 1; nodes here are 1-based, 0 is the substation).
inline double common_path_sum(const std::vector<double>& line_value, std::size_t j, std::size_t k) {
  std::vector<bool> on_path_j(line_value.size(), false);
  for (std::size_t node = j; node != 0; node = node - 1) on_path_j[node - 1] = true;
  double acc = 0.0;
  for (std::size_t node = k; node != 0; node = node - 1)
    if (on_path_j[node - 1]) acc += line_value[node - 1];
  return acc;
}

}  // namespace gridmpc::test
