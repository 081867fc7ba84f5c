#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vnelab/net_model.hpp"
#include "vnelab/random.hpp"
#include "vnelab/tensor.hpp"

namespace vnelab {

/// Random instance with 3..max_pn physical and 2..max_vn virtual nodes (never
/// more virtual than physical) whose demands and availabilities overlap, so
/// both verdicts occur often.
VNEInstance random_small_instance(Rng& rng, int max_pn = 6, int max_vn = 3);

struct OracleReport {
  int instances = 0;
  long long candidates = 0;  // injective mappings with simple-path routings
  long long feasible = 0;
  long long disagreements = 0;
  std::string first_disagreement;
};

/// For every candidate of every instance, compares check_solution and the
/// flow formulation against membership in the enumerated feasible set.
OracleReport oracle_verify(int instances, std::uint64_t seed);

struct ConsistencyReport {
  int pairs = 0;
  long long solutions = 0;  // candidate verdicts compared
  long long mismatches = 0;
  std::string first_mismatch;
};

/// Compares feasibility before and after each graph augmentation on random
/// small instances: the enumerated feasible sets must coincide, and every
/// candidate must keep its check_solution verdict.
ConsistencyReport feasibility_consistency(int pairs, std::uint64_t seed, double eps = 1.0);

struct GradCheckRow {
  std::string family;
  ad::GradCheckResult result;
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Finite-difference checks of every op family and of the full training
/// loss of a small policy.
std::vector<GradCheckRow> gradcheck_suite(std::uint64_t seed = 0);

}  // namespace vnelab
