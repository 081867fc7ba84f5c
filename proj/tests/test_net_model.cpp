#include "doctest.h"
#include "test_util.hpp"
#include "vnelab/errors.hpp"
#include "vnelab/net_model.hpp"
#include "vnelab/random.hpp"
#include "vnelab/sim_engine.hpp"

using namespace vnelab;
using namespace vnelab::testing;

TEST_CASE("apply_solution decrements hosted compute") {
  const auto pn = make_pn({80, 50}, {{0, 1, 60}});
  const auto vn = make_vn({15}, {});
  const auto after = apply_solution(pn, vn, make_solution(vn, {0}, {}));
  CHECK(after.node_available(0) == 65.0);
  CHECK(after.node_available(1) == 50.0);
}

TEST_CASE("apply_solution with nothing placed leaves the network unchanged") {
  const auto pn = make_pn({80, 50}, {{0, 1, 60}});
  const auto vn = make_vn({15, 5}, {{0, 1, 3}});
  Solution empty = Solution::empty_for(vn);
  CHECK(apply_solution(pn, vn, empty) == pn);
}

TEST_CASE("a physical link is charged once per traversing virtual link") {
  // Virtual links 0-1 (10) and 0-2 (20) both cross physical link 0-1.
  const auto pn = make_pn({50, 50, 50}, {{0, 1, 50}, {1, 2, 50}});
  const auto vn = make_vn({1, 1, 1}, {{0, 1, 10}, {0, 2, 20}});
  const auto sol = make_solution(vn, {0, 1, 2}, {{0, 1}, {0, 1, 2}});
  const auto after = apply_solution(pn, vn, sol);
  CHECK(after.link_available(0) == 20.0);
  CHECK(after.link_available(1) == 30.0);
}

TEST_CASE("release is the exact inverse of apply") {
  const auto pn = make_pn({80, 50}, {{0, 1, 60}});
  const auto vn = make_vn({15, 0.1}, {{0, 1, 0.7}});
  const auto sol = make_solution(vn, {0, 1}, {{0, 1}});
  const auto applied = apply_solution(pn, vn, sol);
  CHECK(applied.node_available(0) == 65.0);
  const auto released = release_solution(applied, vn, sol);
  CHECK(released.node_available(0) == 80.0);
  CHECK(released == pn);
}

TEST_CASE("releasing an unapplied solution is an over-release") {
  const auto pn = make_pn({80, 50}, {{0, 1, 60}});
  const auto vn = make_vn({15}, {});
  CHECK_THROWS_AS(release_solution(pn, vn, make_solution(vn, {0}, {})), OverRelease);
}

TEST_CASE("allocating beyond availability throws") {
  const auto pn = make_pn({10, 50}, {{0, 1, 60}});
  const auto vn = make_vn({15}, {});
  CHECK_THROWS_AS(apply_solution(pn, vn, make_solution(vn, {0}, {})), InsufficientResources);
  const auto vn2 = make_vn({1, 1}, {{0, 1, 61}});
  CHECK_THROWS_AS(apply_solution(pn, vn2, make_solution(vn2, {0, 1}, {{0, 1}})),
                  InsufficientResources);
}

TEST_CASE("topology rejects self-loops and duplicate links") {
  Topology t(3);
  t.add_link(0, 1);
  CHECK_THROWS_AS(t.add_link(1, 1), InvariantViolation);
  CHECK_THROWS_AS(t.add_link(1, 0), InvariantViolation);
  CHECK_THROWS_AS(t.add_link(0, 5), InvariantViolation);
}

TEST_CASE("edge list round-trips bit for bit") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pn = gen_waxman(12, 0.5, 0.4, rng);
    const auto back = parse_edge_list(to_edge_list(pn));
    CHECK(back == pn);
    CHECK(to_edge_list(back) == to_edge_list(pn));
  }
  PhysicalNetwork odd;
  odd.add_node(0.1 + 0.2);
  odd.add_node(1e-300);
  odd.add_link(0, 1, 2.0 / 3.0);
  CHECK(parse_edge_list(to_edge_list(odd)) == odd);
}

TEST_CASE("edge list errors carry line numbers") {
  CHECK_THROWS_AS(parse_edge_list(""), ParseError);
  CHECK_THROWS_AS(parse_edge_list("nodes=2\n0,1\ncompute\n0,5\n1,5\n"), ParseError);
  CHECK_THROWS_AS(parse_edge_list("nodes=2\n0,1,5\n0,1,6\ncompute\n0,5\n1,5\n"),
                  InvariantViolation);
  try {
    parse_edge_list("nodes=2\n0,1,x\ncompute\n0,5\n1,5\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("property: apply/release sequences keep availabilities within bounds") {
  Rng rng(11);
  auto pn = gen_waxman(8, 0.5, 0.6, rng, 20, 40, 20, 40);
  const auto start = pn;
  std::vector<std::pair<VirtualNetwork, Solution>> live;
  for (int iter = 0; iter < 300; ++iter) {
    if (!live.empty() && rng.bernoulli(0.4)) {
      const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(live.size()) - 1));
      release(pn, live[idx].first, live[idx].second);
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(idx));
    } else {
      VirtualNetwork vn;
      vn.add_node(quantize_resource(rng.uniform(0, 5)));
      vn.add_node(quantize_resource(rng.uniform(0, 5)));
      const int a = rng.uniform_int(0, pn.num_nodes() - 1);
      const auto nb = pn.topology().neighbors(a);
      const int b = nb[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(nb.size()) - 1))].node;
      vn.add_link(0, 1, quantize_resource(rng.uniform(0, 5)));
      const auto sol = make_solution(vn, {a, b}, {{a, b}});
      try {
        allocate(pn, vn, sol);
        live.emplace_back(vn, sol);
      } catch (const InsufficientResources&) {
      }
    }
    for (int n = 0; n < pn.num_nodes(); ++n) {
      REQUIRE(pn.node_available(n) >= 0.0);
      REQUIRE(pn.node_available(n) <= pn.node_capacity(n));
    }
    for (int l = 0; l < pn.num_links(); ++l) {
      REQUIRE(pn.link_available(l) >= 0.0);
      REQUIRE(pn.link_available(l) <= pn.link_capacity(l));
    }
  }
  for (auto& [vn, sol] : live) release(pn, vn, sol);
  CHECK(pn == start);
}

TEST_CASE("adjacency agrees with the link list after a rebuild") {
  Rng rng(3);
  const auto pn = gen_waxman(30, 0.5, 0.3, rng);
  Topology t = pn.topology();
  t.rebuild_index();
  CHECK(t == pn.topology());
  for (int l = 0; l < t.num_links(); ++l) {
    const auto& e = t.link(l);
    CHECK(t.link_between(e.u, e.v) == l);
    CHECK(t.link_between(e.v, e.u) == l);
  }
}
