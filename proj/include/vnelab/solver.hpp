#pragma once

#include <string>

#include "vnelab/net_model.hpp"

namespace vnelab {

struct SolveResult {
  Solution solution;
  /// Sum of per-step costs along the decision trajectory (0 for solvers that
  /// never construct infeasible partial solutions).
  double violation = 0.0;
};

/// Solve-one-instance interface driven by the simulator and the benchmark.
class Solver {
 public:
  virtual ~Solver() = default;
  virtual std::string name() const = 0;
  virtual SolveResult solve(const VNEInstance& inst) = 0;
};

}  // namespace vnelab
