#include "vnelab/cmdp_env.hpp"

#include <algorithm>
#include <numeric>

#include "vnelab/constraint_core.hpp"
#include "vnelab/errors.hpp"

namespace vnelab {

std::vector<int> placement_order(const VirtualNetwork& vn, OrderPolicy policy) {
  std::vector<int> order(vn.num_nodes());
  std::iota(order.begin(), order.end(), 0);
  if (policy == OrderPolicy::DescendingDemand)
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return vn.node_demand(a) > vn.node_demand(b); });
  return order;
}

EnvState reset(std::shared_ptr<const VNEInstance> inst, OrderPolicy order_policy, int k_paths) {
  EnvState s;
  s.order = placement_order(inst->vn, order_policy);
  s.partial = Solution::empty_for(inst->vn);
  s.node_available = inst->pn.node_available();
  s.link_available = inst->pn.link_available();
  for (auto& a : s.node_available) a = std::max(a, 0.0);
  for (auto& a : s.link_available) a = std::max(a, 0.0);
  s.used.assign(inst->pn.num_nodes(), 0);
  s.paths = std::make_shared<PathCache>(k_paths);
  s.done = s.order.empty();
  s.inst = std::move(inst);
  return s;
}

EnvState reset(const VNEInstance& inst, OrderPolicy order_policy, int k_paths) {
  return reset(std::make_shared<const VNEInstance>(inst), order_policy, k_paths);
}

std::vector<int> prepared_incident_links(const EnvState& state) {
  std::vector<int> out;
  const int v = state.current_node();
  if (v < 0) return out;
  for (const auto& a : state.inst->vn.topology().neighbors(v))
    if (state.partial.node_map[a.node] >= 0) out.push_back(a.link);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<char> action_mask(const EnvState& state) {
  const int n = static_cast<int>(state.used.size());
  std::vector<char> mask(n, 0);
  const int v = state.current_node();
  if (v < 0) return mask;
  const double demand = state.inst->vn.node_demand(v);
  bool any = false;
  for (int p = 0; p < n; ++p) {
    mask[p] = !state.used[p] && demand <= state.node_available[p];
    any = any || mask[p];
  }
  if (!any)
    for (int p = 0; p < n; ++p) mask[p] = !state.used[p];
  return mask;
}

StepOutcome step(EnvState& state, int action, bool tolerant) {
  if (state.done) throw EpisodeFinished("step called on a finished episode");
  const VNEInstance& inst = *state.inst;
  const int np = inst.pn.num_nodes();
  if (action < 0 || action >= np)
    throw InvalidAction("physical node " + std::to_string(action) + " out of range");
  if (state.used[action])
    throw InvalidAction("physical node " + std::to_string(action) + " already hosts this VN");
  if (tolerant && !action_mask(state)[action])
    throw InvalidAction("physical node " + std::to_string(action) + " is masked out");

  const int v = state.current_node();
  const auto prepared = prepared_incident_links(state);
  const double demand = inst.vn.node_demand(v);

  StepOutcome out;
  out.h_node = violation_node(demand, state.node_available[action]).h;
  state.node_available[action] = std::max(0.0, state.node_available[action] - demand);
  state.used[action] = 1;
  state.partial.node_map[v] = action;

  const Topology& ptopo = inst.pn.topology();
  for (int l : prepared) {
    const auto& ends = inst.vn.topology().link(l);
    const int src = state.partial.node_map[ends.u];
    const int dst = state.partial.node_map[ends.v];
    const double bw = inst.vn.link_demand(l);
    RouteResult rr = route_link(ptopo, state.link_available, bw, src, dst, *state.paths, true);
    for (std::size_t i = 1; i < rr.path.size(); ++i) {
      const int pl = *ptopo.link_between(rr.path[i - 1], rr.path[i]);
      state.link_available[pl] = std::max(0.0, state.link_available[pl] - bw);
    }
    out.h_link = std::max(out.h_link.value_or(kNoLinkViolation), rr.violation.h);
    state.partial.link_map[l] = std::move(rr.path);
  }
  const StateViolation sv = violation_state(out.h_node, out.h_link);
  out.h = sv.h;
  out.c = sv.c;
  state.partial.violations.push_back({out.h_node, out.h_link.value_or(kNoLinkViolation)});
  state.any_cost = state.any_cost || out.c > 0.0;
  ++state.t;

  if (!tolerant && out.c > 0.0) {
    state.done = true;
    state.partial.feasible = false;
    score_solution(state.partial, inst.vn);
  } else if (state.t == state.num_steps()) {
    state.done = true;
    state.partial.feasible = !state.any_cost;
    score_solution(state.partial, inst.vn);
    if (tolerant) {
      const double cons = state.partial.consumption;
      out.reward = cons > 0.0 ? state.partial.revenue / cons : 1.0;
    } else {
      out.reward = state.partial.r2c;
    }
  }
  out.done = state.done;
  return out;
}

double Trajectory::total_cost() const {
  double s = 0.0;
  for (const auto& tr : transitions) s += tr.c;
  return s;
}

double Trajectory::max_cost() const {
  double m = 0.0;
  for (const auto& tr : transitions) m = std::max(m, tr.c);
  return m;
}

Trajectory run_episode(const VNEInstance& inst, const ActionFn& act, bool tolerant,
                       OrderPolicy order_policy, int k_paths) {
  Trajectory traj;
  EnvState state = reset(inst, order_policy, k_paths);
  while (!state.done) {
    Transition tr;
    tr.state = state;
    tr.mask = action_mask(state);
    const auto [a, lp] = act(state, tr.mask);
    tr.action = a;
    tr.log_prob = lp;
    const StepOutcome o = step(state, a, tolerant);
    tr.reward = o.reward;
    tr.h = o.h;
    tr.c = o.c;
    tr.done = o.done;
    traj.transitions.push_back(std::move(tr));
    if (o.done) traj.r2c = o.reward;
  }
  traj.solution = state.partial;
  traj.feasible = state.partial.feasible;
  return traj;
}

Trajectory replay(const VNEInstance& inst, const std::vector<int>& actions, bool tolerant,
                  OrderPolicy order_policy, int k_paths) {
  std::size_t i = 0;
  return run_episode(
      inst,
      [&](const EnvState&, const std::vector<char>&) {
        if (i >= actions.size()) throw InvalidAction("replay ran out of recorded actions");
        return std::make_pair(actions[i++], 0.0);
      },
      tolerant, order_policy, k_paths);
}

}  // namespace vnelab
