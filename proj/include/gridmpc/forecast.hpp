#pragma once

#include <limits>
#include <vector>

#include "gridmpc/feeder.hpp"

namespace gridmpc {

/// Exogenous data for one time step; vectors are per node, per unit.
struct StepData {
  Vector p_c;   ///< active load
  Vector q_c;   ///< reactive load
  Vector p_g;   ///< available PV generation
  double v0 = 1.0;
  double t_ambient = 35.0;
};

/// Forecast bundle for one controller solve (steps h = 0..H-1) plus the
/// measured transformer temperature T(0).
struct HorizonInputs {
  std::vector<StepData> steps;
  double t_initial = std::numeric_limits<double>::quiet_NaN();

  std::size_t horizon() const noexcept { return steps.size(); }
};

}  // namespace gridmpc
