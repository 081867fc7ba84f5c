#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "vnelab/heuristics.hpp"
#include "vnelab/net_model.hpp"

namespace vnelab {

enum class OrderPolicy {
  DescendingDemand,  // compute demand high to low, ties by id
  ById,
};

/// Placement order of the virtual nodes of an instance.
std::vector<int> placement_order(const VirtualNetwork& vn, OrderPolicy policy);

/// Embedding status of one episode. Copies share the instance and path cache.
struct EnvState {
  std::shared_ptr<const VNEInstance> inst;
  std::shared_ptr<PathCache> paths;
  std::vector<int> order;
  int t = 0;
  Solution partial;
  std::vector<double> node_available;  // clamped at 0
  std::vector<double> link_available;  // clamped at 0
  std::vector<char> used;              // physical nodes hosting a node of this VN
  bool done = false;
  bool any_cost = false;

  int num_steps() const { return static_cast<int>(order.size()); }
  /// Virtual node placed by the next step, or -1 when done.
  int current_node() const { return done || t >= num_steps() ? -1 : order[t]; }
};

EnvState reset(std::shared_ptr<const VNEInstance> inst,
               OrderPolicy order_policy = OrderPolicy::DescendingDemand, int k_paths = 5);
EnvState reset(const VNEInstance& inst, OrderPolicy order_policy = OrderPolicy::DescendingDemand,
               int k_paths = 5);

/// Virtual links of the current node whose other endpoint is already placed,
/// in ascending id order.
std::vector<int> prepared_incident_links(const EnvState& state);

/// Unused, compute-sufficient physical nodes; all unused nodes when none is
/// sufficient.
std::vector<char> action_mask(const EnvState& state);

struct StepOutcome {
  double reward = 0.0;
  double h = 0.0;
  double c = 0.0;
  double h_node = 0.0;
  std::optional<double> h_link;
  bool done = false;
};

/// Places the current virtual node on `action` and routes its prepared links.
/// Tolerant mode requires a masked-in action and always runs to the last
/// node; strict mode accepts any unused node and stops at the first positive
/// cost. Throws EpisodeFinished after done and InvalidAction otherwise.
StepOutcome step(EnvState& state, int action, bool tolerant);

struct Transition {
  EnvState state;  // before the action
  std::vector<char> mask;
  int action = -1;
  double reward = 0.0;
  double h = 0.0;
  double c = 0.0;
  double budget = 0.0;
  double log_prob = 0.0;
  bool done = false;
};

struct Trajectory {
  std::vector<Transition> transitions;
  Solution solution;  // final partial or complete embedding
  double r2c = 0.0;   // terminal reward
  bool feasible = false;
  double total_cost() const;
  double max_cost() const;
};

/// Returns (action, log-probability) for a state and its mask.
using ActionFn = std::function<std::pair<int, double>(const EnvState&, const std::vector<char>&)>;

Trajectory run_episode(const VNEInstance& inst, const ActionFn& act, bool tolerant,
                       OrderPolicy order_policy = OrderPolicy::DescendingDemand, int k_paths = 5);

/// Re-executes recorded actions from a fresh reset.
Trajectory replay(const VNEInstance& inst, const std::vector<int>& actions, bool tolerant,
                  OrderPolicy order_policy = OrderPolicy::DescendingDemand, int k_paths = 5);

}  // namespace vnelab
