#include "vnelab/heuristics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>

#include "vnelab/errors.hpp"

namespace vnelab {

namespace {

struct PathOrder {
  bool operator()(const Path& a, const Path& b) const {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  }
};

// Lexicographically smallest among the hop-shortest src->dst paths, avoiding
// blocked nodes and links.
std::optional<Path> shortest_path_lex(const Topology& topo, int src, int dst,
                                      const std::vector<char>& blocked_node,
                                      const std::vector<char>& blocked_link) {
  const int n = topo.num_nodes();
  std::vector<int> dist(n, -1);
  std::deque<int> q{dst};
  dist[dst] = 0;
  while (!q.empty()) {
    const int x = q.front();
    q.pop_front();
    for (const auto& a : topo.neighbors(x)) {
      if (blocked_link[a.link] || blocked_node[a.node] || dist[a.node] >= 0) continue;
      dist[a.node] = dist[x] + 1;
      q.push_back(a.node);
    }
  }
  if (dist[src] < 0) return std::nullopt;
  Path p{src};
  int x = src;
  while (x != dst) {
    int next = -1;
    for (const auto& a : topo.neighbors(x)) {
      if (blocked_link[a.link] || blocked_node[a.node]) continue;
      if (dist[a.node] == dist[x] - 1 && (next < 0 || a.node < next)) next = a.node;
    }
    x = next;
    p.push_back(x);
  }
  return p;
}

}  // namespace

std::vector<Path> k_shortest_paths(const Topology& topo, int src, int dst, int k,
                                   std::optional<int> max_hops) {
  if (src == dst) throw NoPath("source equals destination");
  if (k < 1) return {};
  const int n = topo.num_nodes();
  std::vector<char> blocked_node(n, 0), blocked_link(topo.num_links(), 0);
  auto first = shortest_path_lex(topo, src, dst, blocked_node, blocked_link);
  if (!first)
    throw NoPath("no path between " + std::to_string(src) + " and " + std::to_string(dst));

  std::vector<Path> found{*first};
  std::set<Path, PathOrder> candidates;
  while (static_cast<int>(found.size()) < k) {
    const Path& prev = found.back();
    for (std::size_t i = 0; i + 1 < prev.size(); ++i) {
      const int spur = prev[i];
      std::fill(blocked_node.begin(), blocked_node.end(), 0);
      std::fill(blocked_link.begin(), blocked_link.end(), 0);
      for (const Path& p : found) {
        if (p.size() > i + 1 && std::equal(p.begin(), p.begin() + i + 1, prev.begin()))
          blocked_link[*topo.link_between(p[i], p[i + 1])] = 1;
      }
      for (std::size_t j = 0; j < i; ++j) blocked_node[prev[j]] = 1;
      auto spur_path = shortest_path_lex(topo, spur, dst, blocked_node, blocked_link);
      if (!spur_path) continue;
      Path total(prev.begin(), prev.begin() + i);
      total.insert(total.end(), spur_path->begin(), spur_path->end());
      if (std::find(found.begin(), found.end(), total) == found.end())
        candidates.insert(std::move(total));
    }
    if (candidates.empty()) break;
    found.push_back(*candidates.begin());
    candidates.erase(candidates.begin());
  }
  if (max_hops) {
    std::erase_if(found, [&](const Path& p) { return static_cast<int>(p.size()) - 1 > *max_hops; });
    if (found.empty()) throw NoPath("no path within the hop limit");
  }
  return found;
}

const std::vector<Path>& PathCache::paths(const Topology& topo, int src, int dst) {
  if (!bound_ || !(topo_ == topo)) {
    topo_ = topo;
    memo_.clear();
    bound_ = true;
  }
  const auto key = std::make_pair(src, dst);
  auto it = memo_.find(key);
  if (it == memo_.end()) it = memo_.emplace(key, k_shortest_paths(topo, src, dst, k_, max_hops_)).first;
  return it->second;
}

RouteResult route_link(const Topology& topo, std::span<const double> link_available,
                       double demand, int src, int dst, PathCache& cache, bool tolerant) {
  const auto& cands = cache.paths(topo, src, dst);
  std::vector<double> avail;
  auto path_avail = [&](const Path& p) {
    avail.clear();
    for (std::size_t i = 1; i < p.size(); ++i)
      avail.push_back(link_available[*topo.link_between(p[i - 1], p[i])]);
    return std::span<const double>(avail);
  };
  for (const Path& p : cands) {
    const Violation v = violation_link_route(demand, path_avail(p), RouteMode::Feasible);
    if (v.h <= 0.0) return {p, v, true};
  }
  if (!tolerant)
    throw NoFeasiblePath("no candidate path between " + std::to_string(src) + " and " +
                         std::to_string(dst) + " carries bandwidth " + format_double(demand));
  RouteResult best;
  for (const Path& p : cands) {
    const Violation v = violation_link_route(demand, path_avail(p), RouteMode::LeastViolation);
    if (best.path.empty() || v.h < best.violation.h) best = {p, v, false};
  }
  // Slack on some links can cancel the deficit in the sum; an infeasible path
  // still reports at least its worst single-link deficit.
  const Violation worst = violation_link_route(demand, path_avail(best.path), RouteMode::Feasible);
  best.violation.h = std::max(best.violation.h, worst.h);
  return best;
}

RouteResult route_link(const PhysicalNetwork& pn, double demand, int src, int dst, int k,
                       bool tolerant) {
  PathCache cache(k);
  return route_link(pn.topology(), pn.link_available(), demand, src, dst, cache, tolerant);
}

ResourceView physical_view(const PhysicalNetwork& pn) {
  return {&pn.topology(), pn.node_available(), pn.link_available()};
}

ResourceView virtual_view(const VirtualNetwork& vn, std::vector<double>& node_storage,
                          std::vector<double>& link_storage) {
  node_storage.resize(vn.num_nodes());
  link_storage.resize(vn.num_links());
  for (int n = 0; n < vn.num_nodes(); ++n) node_storage[n] = vn.node_demand(n);
  for (int l = 0; l < vn.num_links(); ++l) link_storage[l] = vn.link_demand(l);
  return {&vn.topology(), node_storage, link_storage};
}

namespace {

NodeRanking ranking_from_scores(std::vector<double> scores) {
  NodeRanking r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  r.scores.reserve(scores.size());
  for (int id : r.order) r.scores.push_back(scores[id]);
  return r;
}

}  // namespace

NodeRanking rank_nodes_nrm(const ResourceView& net) {
  const Topology& topo = *net.topo;
  std::vector<double> scores(topo.num_nodes(), 0.0);
  for (int n = 0; n < topo.num_nodes(); ++n) {
    double bw = 0.0;
    for (const auto& a : topo.neighbors(n)) bw += net.link[a.link];
    scores[n] = net.node[n] * bw;
  }
  return ranking_from_scores(std::move(scores));
}

NodeRanking rank_nodes_grc(const ResourceView& net, double damping, double tol, int max_iter) {
  const Topology& topo = *net.topo;
  const int n = topo.num_nodes();
  std::vector<double> c(n);
  const double total = std::accumulate(net.node.begin(), net.node.end(), 0.0);
  for (int i = 0; i < n; ++i) c[i] = total > 0.0 ? net.node[i] / total : 1.0 / n;

  // Column j of M spreads node j's rank over its neighbours by bandwidth share.
  std::vector<double> out_bw(n, 0.0);
  for (int j = 0; j < n; ++j)
    for (const auto& a : topo.neighbors(j)) out_bw[j] += net.link[a.link];

  std::vector<double> r = c, next(n);
  for (int it = 0; it < max_iter; ++it) {
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (const auto& a : topo.neighbors(i))
        if (out_bw[a.node] > 0.0) acc += net.link[a.link] / out_bw[a.node] * r[a.node];
      next[i] = (1.0 - damping) * c[i] + damping * acc;
    }
    double change = 0.0;
    for (int i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - r[i]));
    r.swap(next);
    if (change < tol) return ranking_from_scores(std::move(r));
  }
  throw NonConvergence("GRC power iteration did not converge in " + std::to_string(max_iter) +
                       " iterations");
}

RouteResult route_link_subgraph(const Topology& topo, std::span<const double> link_available,
                                double demand, int src, int dst, int max_hops) {
  std::vector<char> blocked_node(topo.num_nodes(), 0), blocked_link(topo.num_links(), 0);
  for (int l = 0; l < topo.num_links(); ++l) blocked_link[l] = link_available[l] < demand;
  auto path = shortest_path_lex(topo, src, dst, blocked_node, blocked_link);
  if (!path || static_cast<int>(path->size()) - 1 > max_hops)
    throw NoFeasiblePath("no path of at most " + std::to_string(max_hops) + " hops between " +
                         std::to_string(src) + " and " + std::to_string(dst) +
                         " carries bandwidth " + format_double(demand));
  std::vector<double> avail;
  for (std::size_t i = 1; i < path->size(); ++i)
    avail.push_back(link_available[*topo.link_between((*path)[i - 1], (*path)[i])]);
  return {*path, violation_link_route(demand, avail, RouteMode::Feasible), true};
}

namespace {

class GreedyRun {
 public:
  GreedyRun(const VNEInstance& inst, const RankingFn& ranking, const GreedyOptions& opts,
            PathCache& cache)
      : vn_(inst.vn), pn_(inst.pn), opts_(opts), cache_(cache) {
    std::vector<double> vnode, vlink;
    vrank_ = ranking(virtual_view(vn_, vnode, vlink));
    prank_ = ranking(physical_view(pn_));
    sol_ = Solution::empty_for(vn_);
    node_avail_ = pn_.node_available();
    link_avail_ = pn_.link_available();
    used_.assign(pn_.num_nodes(), 0);
  }

  Solution run() {
    const bool ok = opts_.mapping == MappingMode::TwoStage ? two_stage() : incremental();
    sol_.feasible = ok;
    score_solution(sol_, vn_);
    return std::move(sol_);
  }

 private:
  // Reserves bandwidth for a routed link; false when no route exists.
  bool route(int l, int src, int dst, std::vector<std::pair<int, double>>* undo) {
    RouteResult rr;
    try {
      rr = opts_.routing == LinkRouting::FeasibleSubgraph
               ? route_link_subgraph(pn_.topology(), link_avail_, vn_.link_demand(l), src, dst,
                                     opts_.max_hops)
               : route_link(pn_.topology(), link_avail_, vn_.link_demand(l), src, dst, cache_,
                            false);
    } catch (const NoFeasiblePath&) {
      return false;
    } catch (const NoPath&) {
      return false;
    }
    for (std::size_t i = 1; i < rr.path.size(); ++i) {
      const int pl = *pn_.topology().link_between(rr.path[i - 1], rr.path[i]);
      if (undo) undo->emplace_back(pl, link_avail_[pl]);
      link_avail_[pl] -= vn_.link_demand(l);
    }
    sol_.link_map[l] = std::move(rr.path);
    return true;
  }

  bool two_stage() {
    for (int v : vrank_.order) {
      const double demand = vn_.node_demand(v);
      const auto it = std::find_if(prank_.order.begin(), prank_.order.end(),
                                   [&](int p) { return !used_[p] && demand <= node_avail_[p]; });
      if (it == prank_.order.end()) return false;
      used_[*it] = 1;
      node_avail_[*it] -= demand;
      sol_.node_map[v] = *it;
    }
    for (int l = 0; l < vn_.num_links(); ++l) {
      const auto& ends = vn_.topology().link(l);
      if (!route(l, sol_.node_map[ends.u], sol_.node_map[ends.v], nullptr)) return false;
    }
    return true;
  }

  bool incremental() {
    for (int v : vrank_.order) {
      const double demand = vn_.node_demand(v);
      std::vector<int> prepared;
      for (const auto& a : vn_.topology().neighbors(v))
        if (sol_.node_map[a.node] >= 0) prepared.push_back(a.link);
      std::sort(prepared.begin(), prepared.end());
      bool placed = false;
      for (int p : prank_.order) {
        if (used_[p] || demand > node_avail_[p]) continue;
        std::vector<std::pair<int, double>> undo;
        bool ok = true;
        for (int l : prepared) {
          const auto& ends = vn_.topology().link(l);
          const int src = ends.u == v ? p : sol_.node_map[ends.u];
          const int dst = ends.v == v ? p : sol_.node_map[ends.v];
          if (!route(l, src, dst, &undo)) {
            ok = false;
            break;
          }
        }
        if (!ok) {
          for (auto it = undo.rbegin(); it != undo.rend(); ++it) link_avail_[it->first] = it->second;
          for (int l : prepared) sol_.link_map[l].clear();
          continue;
        }
        used_[p] = 1;
        node_avail_[p] -= demand;
        sol_.node_map[v] = p;
        placed = true;
        break;
      }
      if (!placed) return false;
    }
    return true;
  }

  const VirtualNetwork& vn_;
  const PhysicalNetwork& pn_;
  GreedyOptions opts_;
  PathCache& cache_;
  NodeRanking vrank_, prank_;
  Solution sol_;
  std::vector<double> node_avail_, link_avail_;
  std::vector<char> used_;
};

}  // namespace

Solution greedy_solve(const VNEInstance& inst, const RankingFn& ranking,
                      const GreedyOptions& opts, PathCache& cache) {
  return GreedyRun(inst, ranking, opts, cache).run();
}

Solution greedy_solve(const VNEInstance& inst, const RankingFn& ranking,
                      const GreedyOptions& opts) {
  PathCache cache(opts.k);
  return greedy_solve(inst, ranking, opts, cache);
}

RankingFn ranking_fn(RankingKind kind) {
  if (kind == RankingKind::Nrm) return [](const ResourceView& v) { return rank_nodes_nrm(v); };
  return [](const ResourceView& v) { return rank_nodes_grc(v); };
}

SolveResult NodeRankSolver::solve(const VNEInstance& inst) {
  return {greedy_solve(inst, ranking_fn(kind_), opts_, cache_), 0.0};
}

SolveResult ExhaustiveSolver::solve(const VNEInstance& inst) {
  auto best = exhaustive_solve(inst, limits_);
  if (best) return {*best, 0.0};
  Solution s = Solution::empty_for(inst.vn);
  score_solution(s, inst.vn);
  return {s, 0.0};
}

}  // namespace vnelab
