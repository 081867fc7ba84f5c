#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "vnelab/constraint_core.hpp"
#include "vnelab/net_model.hpp"
#include "vnelab/solver.hpp"

namespace vnelab {

/// Up to k loop-free paths ordered by hop count, ties broken by node sequence
/// (Yen's algorithm). Throws NoPath when src and dst are disconnected.
std::vector<Path> k_shortest_paths(const Topology& topo, int src, int dst, int k,
                                   std::optional<int> max_hops = std::nullopt);

/// Memoises k-shortest-path queries for one topology. Paths depend only on
/// hop counts, so the cache stays valid while availabilities change.
class PathCache {
 public:
  explicit PathCache(int k = 5, std::optional<int> max_hops = std::nullopt)
      : k_(k), max_hops_(max_hops) {}

  const std::vector<Path>& paths(const Topology& topo, int src, int dst);
  int k() const { return k_; }

 private:
  int k_;
  std::optional<int> max_hops_;
  Topology topo_;
  bool bound_ = false;
  std::map<std::pair<int, int>, std::vector<Path>> memo_;
};

struct RouteResult {
  Path path;
  Violation violation;
  bool feasible = false;
};

/// Picks the shortest path among the k candidates with no bandwidth deficit
/// (max-form violation). Otherwise: tolerant mode returns the candidate with
/// the least sum-form violation, reported as no less than that path's largest
/// single-link deficit; strict mode throws NoFeasiblePath.
RouteResult route_link(const Topology& topo, std::span<const double> link_available,
                       double demand, int src, int dst, PathCache& cache, bool tolerant);

RouteResult route_link(const PhysicalNetwork& pn, double demand, int src, int dst, int k,
                       bool tolerant);

struct NodeRanking {
  std::vector<int> order;      // node ids, best first
  std::vector<double> scores;  // aligned with order, nonincreasing
};

/// Resource view of either network: compute per node and bandwidth per link
/// (availabilities for a PN, demands for a VN).
struct ResourceView {
  const Topology* topo = nullptr;
  std::span<const double> node;
  std::span<const double> link;
};

ResourceView physical_view(const PhysicalNetwork& pn);
/// Demand vectors are stored in `storage` so the view outlives the call.
ResourceView virtual_view(const VirtualNetwork& vn, std::vector<double>& node_storage,
                          std::vector<double>& link_storage);

/// compute(n) * sum of adjacent link bandwidth.
NodeRanking rank_nodes_nrm(const ResourceView& net);

/// Random-walk fixed point r = (1-d) c + d M r, with c the normalised compute
/// vector and M the bandwidth-normalised transition matrix.
NodeRanking rank_nodes_grc(const ResourceView& net, double damping = 0.85, double tol = 1e-4,
                           int max_iter = 10000);

using RankingFn = std::function<NodeRanking(const ResourceView&)>;

/// Hop-shortest path (lexicographic tie-break) over the links that still carry
/// `demand`. Throws NoFeasiblePath when none exists within max_hops.
RouteResult route_link_subgraph(const Topology& topo, std::span<const double> link_available,
                                double demand, int src, int dst, int max_hops);

enum class MappingMode {
  TwoStage,     // all nodes in rank order, then all links in id order
  Incremental,  // per node, the best-ranked host whose prepared links route
};
enum class LinkRouting {
  FeasibleSubgraph,  // route_link_subgraph
  KShortest,         // first feasible of the k shortest paths
};

struct GreedyOptions {
  MappingMode mapping = MappingMode::TwoStage;
  LinkRouting routing = LinkRouting::FeasibleSubgraph;
  int k = 5;
  int max_hops = 5;
};

/// Node-ranking greedy embedding. Rejects (feasible = false) at the first
/// node without a host or link without a route; there is no backtracking
/// across virtual nodes.
Solution greedy_solve(const VNEInstance& inst, const RankingFn& ranking,
                      const GreedyOptions& opts, PathCache& cache);
Solution greedy_solve(const VNEInstance& inst, const RankingFn& ranking,
                      const GreedyOptions& opts = {});

enum class RankingKind { Nrm, Grc };

RankingFn ranking_fn(RankingKind kind);

class NodeRankSolver : public Solver {
 public:
  explicit NodeRankSolver(RankingKind kind, GreedyOptions opts = {})
      : kind_(kind), opts_(opts), cache_(opts.k) {}
  std::string name() const override { return kind_ == RankingKind::Nrm ? "nrm" : "grc"; }
  SolveResult solve(const VNEInstance& inst) override;
  const GreedyOptions& options() const { return opts_; }

 private:
  RankingKind kind_;
  GreedyOptions opts_;
  PathCache cache_;
};

class ExhaustiveSolver : public Solver {
 public:
  explicit ExhaustiveSolver(ExhaustiveLimits limits = {}) : limits_(limits) {}
  std::string name() const override { return "exhaustive"; }
  SolveResult solve(const VNEInstance& inst) override;

 private:
  ExhaustiveLimits limits_;
};

}  // namespace vnelab
