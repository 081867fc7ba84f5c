#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>

#include "vnelab/net_model.hpp"

namespace vnelab {

/// Verdict of every constraint family of the embedding problem.
struct ConstraintReport {
  bool placement_total = true;    // each virtual node placed exactly once
  bool placement_unique = true;   // each physical node hosts at most one virtual node
  bool node_capacity = true;      // hosted demand within compute availability
  bool path_connectivity = true;  // each virtual link routed over existing physical links
  bool loop_free = true;          // routed paths never revisit a physical node
  bool link_capacity = true;      // summed bandwidth within link availability

  int worst_node = -1;  // physical node with the largest compute excess
  double worst_node_excess = 0.0;
  int worst_link = -1;  // physical link with the largest bandwidth excess
  double worst_link_excess = 0.0;

  bool feasible() const {
    return placement_total && placement_unique && node_capacity && path_connectivity &&
           loop_free && link_capacity;
  }
  std::string summary() const;
};

/// Throws MalformedSolution if map sizes disagree with the VN or a routed
/// path's endpoints differ from the images of its virtual link's endpoints.
ConstraintReport check_solution(const VNEInstance& inst, const Solution& sol);

/// Independent verdict built from the binary placement (x) and link-usage (y)
/// variables of the integer-programming formulation. Loop freedom is enforced
/// per node (at most one unit of flow in and out) as well as per link.
bool check_flow_formulation(const VNEInstance& inst, const Solution& sol);

double revenue(const VirtualNetwork& vn);
/// Computed regardless of the feasibility flag; callers choose the branch.
double consumption(const Solution& sol, const VirtualNetwork& vn);
/// feasible * REV / CONS. A feasible solution with zero consumption scores 1.
double r2c(const Solution& sol, const VirtualNetwork& vn);
/// Fills revenue/consumption/r2c caches on the solution.
void score_solution(Solution& sol, const VirtualNetwork& vn);

struct Violation {
  double h = 0.0;  // negative = slack, positive = deficit
  double cost() const { return h > 0.0 ? h : 0.0; }
};

/// Stand-in for "no routed links this step" so max() reduces to the node term.
inline constexpr double kNoLinkViolation = -1.0e6;

Violation violation_node(double demand, double available);

enum class RouteMode { Feasible, LeastViolation };

/// Feasible mode: max over path links of (demand - available).
/// LeastViolation mode: sum over path links of (demand - available).
Violation violation_link_route(double demand, std::span<const double> path_available,
                               RouteMode mode);

struct StateViolation {
  double h = 0.0;
  double c = 0.0;
};

StateViolation violation_state(double h_node, std::optional<double> h_link);

struct ExhaustiveLimits {
  int max_vn = 3;
  int max_pn = 8;
};

/// Calls visit for every feasible solution reachable with injective node maps
/// and simple-path routings, in lexicographic node-map order.
void enumerate_feasible(const VNEInstance& inst, const ExhaustiveLimits& limits,
                        const std::function<void(const Solution&)>& visit);

/// Highest-R2C feasible solution or nullopt when the feasible set is empty.
/// Ties go to the lexicographically smallest node map. Throws LimitExceeded.
std::optional<Solution> exhaustive_solve(const VNEInstance& inst,
                                         const ExhaustiveLimits& limits = {});

/// All simple paths src->dst with at most max_hops links, ordered by hop
/// count and then lexicographically by node sequence.
std::vector<Path> all_simple_paths(const Topology& topo, int src, int dst, int max_hops);

}  // namespace vnelab
