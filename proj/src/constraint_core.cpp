#include "vnelab/constraint_core.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <sstream>

#include "vnelab/errors.hpp"

namespace vnelab {

std::string ConstraintReport::summary() const {
  std::ostringstream os;
  os << "placement_total=" << placement_total << " placement_unique=" << placement_unique
     << " node_capacity=" << node_capacity << " path_connectivity=" << path_connectivity
     << " loop_free=" << loop_free << " link_capacity=" << link_capacity;
  if (worst_node >= 0) os << " worst_node=" << worst_node << "(+" << worst_node_excess << ")";
  if (worst_link >= 0) os << " worst_link=" << worst_link << "(+" << worst_link_excess << ")";
  return os.str();
}

ConstraintReport check_solution(const VNEInstance& inst, const Solution& sol) {
  const VirtualNetwork& vn = inst.vn;
  const PhysicalNetwork& pn = inst.pn;
  if (static_cast<int>(sol.node_map.size()) != vn.num_nodes() ||
      static_cast<int>(sol.link_map.size()) != vn.num_links())
    throw MalformedSolution("solution maps do not match the virtual network size");

  ConstraintReport rep;
  std::vector<int> hosted(pn.num_nodes(), 0);
  std::vector<double> node_use(pn.num_nodes(), 0.0);
  for (int v = 0; v < vn.num_nodes(); ++v) {
    const int p = sol.node_map[v];
    if (p < 0) {
      rep.placement_total = false;
      continue;
    }
    if (p >= pn.num_nodes())
      throw MalformedSolution("virtual node " + std::to_string(v) +
                              " mapped to unknown physical node " + std::to_string(p));
    if (++hosted[p] > 1) rep.placement_unique = false;
    node_use[p] += vn.node_demand(v);
  }
  for (int p = 0; p < pn.num_nodes(); ++p) {
    const double excess = node_use[p] - pn.node_available(p);
    if (excess > 0.0) {
      rep.node_capacity = false;
      if (rep.worst_node < 0 || excess > rep.worst_node_excess) {
        rep.worst_node = p;
        rep.worst_node_excess = excess;
      }
    }
  }

  std::vector<double> link_use(pn.num_links(), 0.0);
  for (int l = 0; l < vn.num_links(); ++l) {
    const Path& path = sol.link_map[l];
    if (path.empty()) {
      rep.path_connectivity = false;
      continue;
    }
    const auto& ends = vn.topology().link(l);
    const int a = sol.node_map[ends.u];
    const int b = sol.node_map[ends.v];
    if (a < 0 || b < 0)
      throw MalformedSolution("virtual link " + std::to_string(l) +
                              " routed while an endpoint is unplaced");
    const bool forward = path.front() == a && path.back() == b;
    const bool backward = path.front() == b && path.back() == a;
    if (!forward && !backward)
      throw MalformedSolution("virtual link " + std::to_string(l) +
                              ": path endpoints differ from the node mapping");
    std::vector<char> seen(pn.num_nodes(), 0);
    for (std::size_t i = 0; i < path.size(); ++i) {
      const int x = path[i];
      if (x < 0 || x >= pn.num_nodes())
        throw MalformedSolution("virtual link " + std::to_string(l) +
                                ": path visits unknown physical node");
      if (seen[x]) rep.loop_free = false;
      seen[x] = 1;
      if (i == 0) continue;
      const auto pl = pn.topology().link_between(path[i - 1], x);
      if (!pl) {
        rep.path_connectivity = false;
        continue;
      }
      link_use[*pl] += vn.link_demand(l);
    }
  }
  for (int pl = 0; pl < pn.num_links(); ++pl) {
    const double excess = link_use[pl] - pn.link_available(pl);
    if (excess > 0.0) {
      rep.link_capacity = false;
      if (rep.worst_link < 0 || excess > rep.worst_link_excess) {
        rep.worst_link = pl;
        rep.worst_link_excess = excess;
      }
    }
  }
  return rep;
}

bool check_flow_formulation(const VNEInstance& inst, const Solution& sol) {
  const VirtualNetwork& vn = inst.vn;
  const PhysicalNetwork& pn = inst.pn;
  const int nv = vn.num_nodes();
  const int np = pn.num_nodes();

  // x[m][i]
  std::vector<std::vector<int>> x(nv, std::vector<int>(np, 0));
  for (int m = 0; m < nv; ++m) {
    const int p = m < static_cast<int>(sol.node_map.size()) ? sol.node_map[m] : -1;
    if (p >= 0 && p < np) x[m][p] = 1;
  }
  for (int m = 0; m < nv; ++m) {
    int s = 0;
    for (int i = 0; i < np; ++i) s += x[m][i];
    if (s != 1) return false;
  }
  for (int i = 0; i < np; ++i) {
    int s = 0;
    for (int m = 0; m < nv; ++m) s += x[m][i];
    if (s > 1) return false;
  }
  for (int m = 0; m < nv; ++m)
    for (int i = 0; i < np; ++i)
      if (x[m][i] * vn.node_demand(m) > pn.node_available(i)) return false;

  // y[l][(i,j)] over directed physical arcs; arc index 2*link (+1 for v->u).
  const int arcs = 2 * pn.num_links();
  std::vector<double> bw_use(pn.num_links(), 0.0);
  for (int l = 0; l < vn.num_links(); ++l) {
    std::vector<int> y(arcs, 0);
    const Path& path = l < static_cast<int>(sol.link_map.size()) ? sol.link_map[l] : Path{};
    for (std::size_t k = 1; k < path.size(); ++k) {
      const int i = path[k - 1], j = path[k];
      if (i < 0 || i >= np || j < 0 || j >= np) return false;
      const auto pl = pn.topology().link_between(i, j);
      if (!pl) return false;  // no variable exists for a missing link
      const bool along = pn.topology().link(*pl).u == i;
      y[2 * *pl + (along ? 0 : 1)] = 1;
    }
    // flow conservation: out(k) - in(k) = sign * (x[m][k] - x[w][k])
    const auto& ends = vn.topology().link(l);
    std::vector<int> balance(np, 0), out_deg(np, 0), in_deg(np, 0);
    for (int pl = 0; pl < pn.num_links(); ++pl) {
      const auto& e = pn.topology().link(pl);
      if (y[2 * pl]) {
        ++out_deg[e.u];
        ++in_deg[e.v];
      }
      if (y[2 * pl + 1]) {
        ++out_deg[e.v];
        ++in_deg[e.u];
      }
    }
    for (int k = 0; k < np; ++k) balance[k] = out_deg[k] - in_deg[k];
    bool forward_ok = true, backward_ok = true;
    for (int k = 0; k < np; ++k) {
      const int rhs = x[ends.u][k] - x[ends.v][k];
      if (balance[k] != rhs) forward_ok = false;
      if (balance[k] != -rhs) backward_ok = false;
    }
    if (!forward_ok && !backward_ok) return false;
    // loop freedom
    for (int pl = 0; pl < pn.num_links(); ++pl)
      if (y[2 * pl] + y[2 * pl + 1] > 1) return false;
    for (int k = 0; k < np; ++k)
      if (out_deg[k] > 1 || in_deg[k] > 1) return false;
    for (int pl = 0; pl < pn.num_links(); ++pl)
      bw_use[pl] += (y[2 * pl] + y[2 * pl + 1]) * vn.link_demand(l);
  }
  for (int pl = 0; pl < pn.num_links(); ++pl)
    if (bw_use[pl] > pn.link_available(pl)) return false;
  return true;
}

double revenue(const VirtualNetwork& vn) {
  double r = 0.0;
  for (int n = 0; n < vn.num_nodes(); ++n) r += vn.node_demand(n);
  for (int l = 0; l < vn.num_links(); ++l) r += vn.link_demand(l);
  return r;
}

double consumption(const Solution& sol, const VirtualNetwork& vn) {
  double c = 0.0;
  for (int n = 0; n < vn.num_nodes(); ++n) c += vn.node_demand(n);
  for (int l = 0; l < vn.num_links(); ++l) {
    const std::size_t len = l < static_cast<int>(sol.link_map.size()) ? sol.link_map[l].size() : 0;
    const double hops = len > 0 ? static_cast<double>(len - 1) : 0.0;
    c += hops * vn.link_demand(l);
  }
  return c;
}

double r2c(const Solution& sol, const VirtualNetwork& vn) {
  if (!sol.feasible) return 0.0;
  const double cons = consumption(sol, vn);
  if (cons <= 0.0) return 1.0;
  return revenue(vn) / cons;
}

void score_solution(Solution& sol, const VirtualNetwork& vn) {
  sol.revenue = revenue(vn);
  sol.consumption = consumption(sol, vn);
  sol.r2c = r2c(sol, vn);
}

Violation violation_node(double demand, double available) { return {demand - available}; }

Violation violation_link_route(double demand, std::span<const double> path_available,
                               RouteMode mode) {
  if (path_available.empty()) return {kNoLinkViolation};
  if (mode == RouteMode::Feasible) {
    double h = -std::numeric_limits<double>::infinity();
    for (double a : path_available) h = std::max(h, demand - a);
    return {h};
  }
  double h = 0.0;
  for (double a : path_available) h += demand - a;
  return {h};
}

StateViolation violation_state(double h_node, std::optional<double> h_link) {
  const double h = std::max(h_node, h_link.value_or(kNoLinkViolation));
  return {h, h > 0.0 ? h : 0.0};
}

std::vector<Path> all_simple_paths(const Topology& topo, int src, int dst, int max_hops) {
  std::vector<Path> out;
  if (src == dst) return out;
  Path cur{src};
  std::vector<char> on_path(topo.num_nodes(), 0);
  on_path[src] = 1;
  std::function<void(int)> dfs = [&](int x) {
    if (x == dst) {
      out.push_back(cur);
      return;
    }
    if (static_cast<int>(cur.size()) - 1 >= max_hops) return;
    for (const auto& a : topo.neighbors(x)) {
      if (on_path[a.node]) continue;
      on_path[a.node] = 1;
      cur.push_back(a.node);
      dfs(a.node);
      cur.pop_back();
      on_path[a.node] = 0;
    }
  };
  dfs(src);
  std::sort(out.begin(), out.end(), [](const Path& a, const Path& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  return out;
}

namespace {

void check_limits(const VNEInstance& inst, const ExhaustiveLimits& limits) {
  if (inst.vn.num_nodes() > limits.max_vn)
    throw LimitExceeded("virtual network has " + std::to_string(inst.vn.num_nodes()) +
                        " nodes, limit " + std::to_string(limits.max_vn));
  if (inst.pn.num_nodes() > limits.max_pn)
    throw LimitExceeded("physical network has " + std::to_string(inst.pn.num_nodes()) +
                        " nodes, limit " + std::to_string(limits.max_pn));
}

// Depth-first search shared by enumeration and optimisation. `prune` lets the
// optimiser cut link-routing subtrees given the consumption accumulated so far.
class Enumerator {
 public:
  Enumerator(const VNEInstance& inst, const ExhaustiveLimits& limits)
      : inst_(inst), limits_(limits) {
    const int np = inst.pn.num_nodes();
    paths_.resize(static_cast<std::size_t>(np) * np);
    computed_.assign(static_cast<std::size_t>(np) * np, 0);
    node_avail_ = inst.pn.node_available();
    link_avail_ = inst.pn.link_available();
    sol_ = Solution::empty_for(inst.vn);
    used_.assign(np, 0);
  }

  std::function<void(const Solution&)> on_complete;
  std::function<bool(double partial_cons, int next_link)> prune;

  void run() { place(0); }

  const std::vector<Path>& paths(int a, int b) {
    const std::size_t key = static_cast<std::size_t>(a) * inst_.pn.num_nodes() + b;
    if (!computed_[key]) {
      paths_[key] = all_simple_paths(inst_.pn.topology(), a, b, limits_.max_pn);
      computed_[key] = 1;
    }
    return paths_[key];
  }

 private:
  void place(int v) {
    if (v == inst_.vn.num_nodes()) {
      double cons = 0.0;
      for (int n = 0; n < inst_.vn.num_nodes(); ++n) cons += inst_.vn.node_demand(n);
      route(0, cons);
      return;
    }
    for (int p = 0; p < inst_.pn.num_nodes(); ++p) {
      if (used_[p] || inst_.vn.node_demand(v) > node_avail_[p]) continue;
      used_[p] = 1;
      sol_.node_map[v] = p;
      place(v + 1);
      sol_.node_map[v] = -1;
      used_[p] = 0;
    }
  }

  void route(int l, double cons) {
    if (prune && prune(cons, l)) return;
    if (l == inst_.vn.num_links()) {
      Solution s = sol_;
      s.feasible = true;
      score_solution(s, inst_.vn);
      on_complete(s);
      return;
    }
    const auto& ends = inst_.vn.topology().link(l);
    const double d = inst_.vn.link_demand(l);
    const auto& cands = paths(sol_.node_map[ends.u], sol_.node_map[ends.v]);
    for (const Path& path : cands) {
      std::vector<int> plinks;
      bool ok = true;
      for (std::size_t i = 1; i < path.size() && ok; ++i) {
        const int pl = *inst_.pn.topology().link_between(path[i - 1], path[i]);
        if (d > link_avail_[pl]) ok = false;
        plinks.push_back(pl);
      }
      if (!ok) continue;
      std::vector<double> saved;
      for (int pl : plinks) saved.push_back(link_avail_[pl]);
      for (int pl : plinks) link_avail_[pl] -= d;
      sol_.link_map[l] = path;
      route(l + 1, cons + static_cast<double>(path.size() - 1) * d);
      sol_.link_map[l].clear();
      for (std::size_t i = 0; i < plinks.size(); ++i) link_avail_[plinks[i]] = saved[i];
    }
  }

  const VNEInstance& inst_;
  ExhaustiveLimits limits_;
  std::vector<std::vector<Path>> paths_;
  std::vector<char> computed_;
  std::vector<double> node_avail_, link_avail_;
  std::vector<char> used_;
  Solution sol_;
};

}  // namespace

void enumerate_feasible(const VNEInstance& inst, const ExhaustiveLimits& limits,
                        const std::function<void(const Solution&)>& visit) {
  check_limits(inst, limits);
  Enumerator e(inst, limits);
  e.on_complete = visit;
  e.run();
}

std::optional<Solution> exhaustive_solve(const VNEInstance& inst,
                                         const ExhaustiveLimits& limits) {
  check_limits(inst, limits);
  Enumerator e(inst, limits);
  std::optional<Solution> best;
  double best_cons = std::numeric_limits<double>::infinity();
  e.on_complete = [&](const Solution& s) {
    if (s.consumption < best_cons) {
      best_cons = s.consumption;
      best = s;
    }
  };
  // REV is fixed per instance, so maximising R2C means minimising CONS.
  // Every remaining link needs at least one hop.
  std::vector<double> remaining_min(inst.vn.num_links() + 1, 0.0);
  for (int l = inst.vn.num_links() - 1; l >= 0; --l)
    remaining_min[l] = remaining_min[l + 1] + inst.vn.link_demand(l);
  e.prune = [&](double cons, int next_link) {
    return cons + remaining_min[next_link] >= best_cons;
  };
  e.run();
  return best;
}

}  // namespace vnelab
