#include <cmath>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "test_util.hpp"
#include "vnelab/errors.hpp"
#include "vnelab/heuristics.hpp"
#include "vnelab/sim_engine.hpp"

using namespace vnelab;
using namespace vnelab::testing;

namespace {

class RejectAll : public Solver {
 public:
  std::string name() const override { return "reject"; }
  SolveResult solve(const VNEInstance& inst) override {
    return {Solution::empty_for(inst.vn), 0.0};
  }
};

class Throwing : public Solver {
 public:
  std::string name() const override { return "throwing"; }
  SolveResult solve(const VNEInstance& inst) override {
    if (inst.vn.id % 2 == 0) throw std::runtime_error("boom");
    return inner.solve(inst);
  }
  NodeRankSolver inner{RankingKind::Grc};
};

SimulationConfig small_config(std::uint64_t seed = 1) {
  SimulationConfig cfg;
  cfg.pn_nodes = 20;
  cfg.num_requests = 150;
  cfg.arrival_rate = 0.05;
  cfg.seed = seed;
  return cfg;
}

void check_same(const SimulationRecord& a, const SimulationRecord& b) {
  REQUIRE(a.outcomes.size() == b.outcomes.size());
  for (std::size_t i = 0; i < a.outcomes.size(); ++i) {
    CHECK(a.outcomes[i].vn_id == b.outcomes[i].vn_id);
    CHECK(a.outcomes[i].accepted == b.outcomes[i].accepted);
    CHECK(a.outcomes[i].revenue == b.outcomes[i].revenue);
    CHECK(a.outcomes[i].consumption == b.outcomes[i].consumption);
  }
  std::ostringstream la, lb;
  write_event_log(la, a);
  write_event_log(lb, b);
  CHECK(la.str() == lb.str());
  CHECK(a.final_pn == b.final_pn);
}

}  // namespace

TEST_CASE("Waxman generation is connected, seeded and sized") {
  Rng a(3), b(3);
  const auto g1 = gen_waxman(100, 0.5, 0.2, a);
  const auto g2 = gen_waxman(100, 0.5, 0.2, b);
  CHECK(g1 == g2);
  CHECK(g1.topology().is_connected());
  for (int n = 0; n < g1.num_nodes(); ++n) {
    CHECK(g1.node_capacity(n) >= 50.0);
    CHECK(g1.node_capacity(n) <= 100.0);
  }
  Rng c(9);
  const auto two = gen_waxman(2, 0.5, 1e-9, c);
  CHECK(two.num_links() == 1);
}

TEST_CASE("default Waxman parameters give roughly 500 links") {
  double total = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    total += gen_waxman(100, 0.5, 0.2, rng).num_links();
  }
  const double mean = total / 20.0;
  CHECK(mean >= 400.0);
  CHECK(mean <= 600.0);
}

TEST_CASE("beta calibration hits a link target") {
  const double beta = calibrate_waxman_beta(40, 0.5, 100.0, 10, 1);
  double total = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s + 1000);
    total += gen_waxman(40, 0.5, beta, rng).num_links();
  }
  CHECK(total / 10.0 == doctest::Approx(100.0).epsilon(0.15));
}

TEST_CASE("request generation statistics") {
  SimulationConfig cfg;
  cfg.num_requests = 10000;
  const auto reqs = generate_requests(cfg);
  REQUIRE(reqs.size() == 10000);
  double life = 0;
  for (const auto& vn : reqs) {
    life += vn.lifetime;
    CHECK(vn.num_nodes() >= 2);
    CHECK(vn.num_nodes() <= 10);
    CHECK(vn.topology().is_connected());
    if (vn.num_nodes() == 2) CHECK(vn.num_links() == 1);
  }
  const double gap = (reqs.back().arrival - reqs.front().arrival) / (reqs.size() - 1);
  CHECK(life / 10000 >= 475.0);
  CHECK(life / 10000 <= 525.0);
  CHECK(gap >= 6.79);
  CHECK(gap <= 7.50);
  for (std::size_t i = 1; i < reqs.size(); ++i) CHECK(reqs[i].arrival >= reqs[i - 1].arrival);
}

TEST_CASE("demand draws respect configured ranges") {
  SimulationConfig cfg;
  cfg.num_requests = 500;
  for (const auto& vn : generate_requests(cfg)) {
    for (int n = 0; n < vn.num_nodes(); ++n) {
      REQUIRE(vn.node_demand(n) >= 0.0);
      REQUIRE(vn.node_demand(n) <= 20.0);
    }
    for (int l = 0; l < vn.num_links(); ++l) {
      REQUIRE(vn.link_demand(l) >= 0.0);
      REQUIRE(vn.link_demand(l) <= 50.0);
    }
  }
}

TEST_CASE("config validation and key parsing") {
  SimulationConfig cfg;
  CHECK(cfg.set("arrival_rate", "0.2"));
  CHECK(cfg.arrival_rate == 0.2);
  CHECK_FALSE(cfg.set("no_such_key", "1"));
  CHECK_THROWS_AS(cfg.set("arrival_rate", "fast"), ConfigError);
  cfg.arrival_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SimulationConfig{};
  cfg.vn_link_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SimulationConfig{};
  cfg.vn_size_min = 5;
  cfg.vn_size_max = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  const auto parsed = parse_simulation_config("# comment\n[sim]\npn_nodes = 30\nseed = \"7\"\n");
  CHECK(parsed.pn_nodes == 30);
  CHECK(parsed.seed == 7);
  CHECK_THROWS_AS(parse_simulation_config("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("just words\n"), ParseError);
}

TEST_CASE("a rejecting solver leaves the network untouched") {
  RejectAll solver;
  const auto cfg = small_config();
  const auto rec = run_simulation(solver, cfg);
  CHECK(rec.total == cfg.num_requests);
  CHECK(rec.accepted == 0);
  CHECK(rec.final_pn == make_physical_network(cfg));
}

TEST_CASE("one accepted request is released on departure") {
  SimulationConfig cfg;
  cfg.num_requests = 1;
  cfg.vn_size_max = 3;
  const auto pn = make_pn({100, 100, 100, 100},
                          {{0, 1, 100}, {1, 2, 100}, {2, 3, 100}, {0, 3, 100}, {0, 2, 100}});
  ExhaustiveSolver solver;
  int arrivals = 0, departures = 0;
  SimulationHooks hooks;
  hooks.on_event = [&](const SimEvent& e, const PhysicalNetwork& state,
                       const std::vector<const ActiveEmbedding*>& active) {
    if (e.kind == EventKind::Arrival) {
      ++arrivals;
      CHECK(e.accepted);
      CHECK(active.size() == 1);
      CHECK_FALSE(state == pn);
    } else {
      ++departures;
      CHECK(active.empty());
      CHECK(state == pn);
    }
  };
  const auto rec = run_simulation(solver, cfg, pn, hooks);
  CHECK(rec.accepted == 1);
  CHECK(arrivals == 1);
  CHECK(departures == 1);
  CHECK(rec.final_pn == pn);
}

TEST_CASE("solver exceptions are recorded as failures") {
  Throwing solver;
  const auto rec = run_simulation(solver, small_config());
  CHECK(rec.failures == (rec.total + 1) / 2);
  for (const auto& o : rec.outcomes) {
    if (o.vn_id % 2 == 0) {
      CHECK_FALSE(o.accepted);
      CHECK(o.failure == "boom");
    }
  }
  CHECK(rec.accepted > 0);
}

TEST_CASE("simulation is deterministic") {
  NodeRankSolver s1(RankingKind::Grc), s2(RankingKind::Grc);
  check_same(run_simulation(s1, small_config(4)), run_simulation(s2, small_config(4)));
}

TEST_CASE("property: events are time ordered and the ledger is conserved") {
  NodeRankSolver solver(RankingKind::Nrm);
  double last = -1.0;
  int checked = 0;
  SimulationHooks hooks;
  hooks.on_event = [&](const SimEvent& e, const PhysicalNetwork& pn,
                       const std::vector<const ActiveEmbedding*>& active) {
    REQUIRE(e.time >= last);
    last = e.time;
    std::vector<double> node(static_cast<std::size_t>(pn.num_nodes()), 0.0);
    std::vector<double> link(static_cast<std::size_t>(pn.num_links()), 0.0);
    for (const auto* a : active) {
      const auto use = resource_usage(pn, a->vn, a->solution);
      for (std::size_t i = 0; i < node.size(); ++i) node[i] += use.node[i];
      for (std::size_t i = 0; i < link.size(); ++i) link[i] += use.link[i];
    }
    for (int n = 0; n < pn.num_nodes(); ++n)
      REQUIRE(pn.node_capacity(n) - pn.node_available(n) ==
              doctest::Approx(node[static_cast<std::size_t>(n)]).epsilon(1e-9));
    for (int l = 0; l < pn.num_links(); ++l)
      REQUIRE(pn.link_capacity(l) - pn.link_available(l) ==
              doctest::Approx(link[static_cast<std::size_t>(l)]).epsilon(1e-9));
    ++checked;
  };
  auto cfg = small_config(2);
  cfg.arrival_rate = 0.5;
  const auto rec = run_simulation(solver, cfg, hooks);
  CHECK(checked == static_cast<int>(rec.events.size()));
  CHECK(rec.accepted <= rec.total);
}

TEST_CASE("edge-list topology import") {
  CHECK_THROWS_AS(import_topology("/nonexistent/topology.txt"), Error);
#ifdef VNELAB_DATA_DIR
  const auto geant = import_topology(std::string(VNELAB_DATA_DIR) + "/geant.edges");
  CHECK(geant.num_nodes() == 40);
  CHECK(geant.num_links() == 64);
  CHECK(geant.topology().is_connected());
#endif
  CHECK_THROWS_AS(parse_edge_list("nodes=2\n0,1,5\ncompute\n"), ParseError);
}
