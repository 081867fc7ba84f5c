#include <algorithm>

#include "doctest.h"
#include "test_util.hpp"
#include "vnelab/cmdp_env.hpp"
#include "vnelab/constraint_core.hpp"
#include "vnelab/errors.hpp"
#include "vnelab/selfcheck.hpp"

using namespace vnelab;
using namespace vnelab::testing;

namespace {

VNEInstance square_instance(std::initializer_list<double> demand, std::initializer_list<L> links) {
  VNEInstance inst;
  inst.pn = make_pn({15, 15, 15, 15}, {{0, 1, 50}, {1, 2, 50}, {2, 3, 50}, {0, 3, 50}, {0, 2, 50}});
  inst.vn = make_vn(demand, links);
  return inst;
}

ActionFn uniform_policy(Rng& rng) {
  return [&rng](const EnvState&, const std::vector<char>& mask) {
    std::vector<int> ok;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) ok.push_back(static_cast<int>(i));
    return std::pair<int, double>{ok[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(ok.size()) - 1))], 0.0};
  };
}

}  // namespace

TEST_CASE("reset fixes the placement order") {
  const auto inst = square_instance({5, 9, 2}, {{0, 1, 1}, {1, 2, 1}});
  const auto s = reset(inst);
  CHECK(s.num_steps() == 3);
  CHECK(s.order == std::vector<int>{1, 0, 2});
  CHECK(reset(inst).order == s.order);
  CHECK(s.t == 0);
  CHECK(std::all_of(s.partial.node_map.begin(), s.partial.node_map.end(), [](int p) { return p == -1; }));
  CHECK(placement_order(inst.vn, OrderPolicy::ById) == std::vector<int>{0, 1, 2});
  CHECK(placement_order(make_vn({4, 4, 7}, {}), OrderPolicy::DescendingDemand) ==
        std::vector<int>{2, 0, 1});
}

TEST_CASE("prepared incident links") {
  // triangle: third placement sees both of its links
  auto tri = square_instance({3, 2, 1}, {{0, 1, 1}, {1, 2, 1}, {0, 2, 1}});
  auto s = reset(tri);
  CHECK(prepared_incident_links(s).empty());
  step(s, 0, true);
  CHECK(prepared_incident_links(s) == std::vector<int>{0});
  step(s, 1, true);
  CHECK(prepared_incident_links(s) == std::vector<int>{1, 2});

  // star: a leaf placed after the hub sees only its hub link
  auto star = square_instance({9, 1, 2, 3}, {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}});
  s = reset(star);
  step(s, 0, true);
  CHECK(s.current_node() == 3);
  CHECK(prepared_incident_links(s) == std::vector<int>{2});
}

TEST_CASE("action mask rules") {
  auto inst = square_instance({5, 5}, {{0, 1, 1}});
  auto s = reset(inst);
  CHECK(action_mask(s) == std::vector<char>{1, 1, 1, 1});
  step(s, 2, true);
  CHECK(action_mask(s) == std::vector<char>{1, 1, 0, 1});

  inst = square_instance({20, 20}, {{0, 1, 1}});
  s = reset(inst);
  CHECK(action_mask(s) == std::vector<char>{1, 1, 1, 1});
  step(s, 1, true);
  CHECK(action_mask(s) == std::vector<char>{1, 0, 1, 1});
}

TEST_CASE("a slack placement without links has negative violation and no reward") {
  auto inst = square_instance({10, 4}, {{0, 1, 5}});
  auto s = reset(inst);
  const auto out = step(s, 0, true);
  CHECK(out.h == -5.0);
  CHECK(out.h_node == -5.0);
  CHECK_FALSE(out.h_link.has_value());
  CHECK(out.c == 0.0);
  CHECK(out.reward == 0.0);
  CHECK_FALSE(out.done);
}

TEST_CASE("direct-edge completion earns full reward") {
  auto inst = square_instance({10, 4}, {{0, 1, 5}});
  auto s = reset(inst);
  step(s, 0, true);
  const auto out = step(s, 1, true);
  CHECK(out.done);
  CHECK(out.reward == 1.0);
  CHECK(out.h_link.has_value());
  CHECK(*out.h_link == -45.0);
  CHECK_THROWS_AS(step(s, 2, true), EpisodeFinished);
}

TEST_CASE("strict mode ends at the first deficit") {
  VNEInstance inst;
  inst.pn = make_pn({30, 30, 30}, {{0, 1, 7}, {1, 2, 7}, {0, 2, 7}});
  inst.vn = make_vn({5, 4}, {{0, 1, 10}});
  auto s = reset(inst);
  step(s, 0, false);
  const auto out = step(s, 1, false);
  CHECK(out.done);
  CHECK(out.c == 3.0);
  CHECK(out.reward == 0.0);
  CHECK_FALSE(s.partial.feasible);
}

TEST_CASE("tolerant mode keeps going through deficits and clamps availabilities") {
  VNEInstance inst;
  inst.pn = make_pn({30, 30, 30}, {{0, 1, 7}, {1, 2, 7}, {0, 2, 7}});
  inst.vn = make_vn({5, 4, 1}, {{0, 1, 10}, {1, 2, 1}});
  auto s = reset(inst);
  step(s, 0, true);
  const auto mid = step(s, 1, true);
  CHECK(mid.c == 3.0);
  CHECK_FALSE(mid.done);
  CHECK(std::all_of(s.link_available.begin(), s.link_available.end(), [](double a) { return a >= 0.0; }));
  const auto last = step(s, 2, true);
  CHECK(last.done);
  CHECK(last.reward > 0.0);
}

TEST_CASE("tolerant steps reject masked-out actions") {
  auto inst = square_instance({5, 5}, {{0, 1, 1}});
  auto s = reset(inst);
  step(s, 2, true);
  CHECK_THROWS_AS(step(s, 2, true), InvalidAction);
  CHECK_THROWS_AS(step(s, 9, true), InvalidAction);
  CHECK_THROWS_AS(step(s, 2, false), InvalidAction);
}

TEST_CASE("property: tolerant episodes run every step and pay out only at the end") {
  Rng rng(13);
  auto act = uniform_policy(rng);
  for (int i = 0; i < 300; ++i) {
    const auto inst = random_small_instance(rng, 7, 4);
    const auto traj = run_episode(inst, act, true);
    REQUIRE(static_cast<int>(traj.transitions.size()) == inst.vn.num_nodes());
    double rewards = 0.0;
    for (std::size_t t = 0; t < traj.transitions.size(); ++t) {
      const auto& tr = traj.transitions[t];
      REQUIRE(tr.c == std::max(tr.h, 0.0));
      REQUIRE(tr.mask[static_cast<std::size_t>(tr.action)]);
      if (t + 1 < traj.transitions.size()) REQUIRE(tr.reward == 0.0);
      rewards += tr.reward;
    }
    REQUIRE(rewards == traj.r2c);
    REQUIRE(traj.solution.complete());
  }
}

TEST_CASE("property: strict episodes that finish are feasible") {
  Rng rng(17);
  auto act = uniform_policy(rng);
  int finished = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto inst = random_small_instance(rng, 7, 4);
    const auto traj = run_episode(inst, act, false);
    REQUIRE(static_cast<int>(traj.transitions.size()) <= inst.vn.num_nodes());
    if (traj.feasible) {
      ++finished;
      INFO(check_solution(inst, traj.solution).summary());
      REQUIRE(check_solution(inst, traj.solution).feasible());
      REQUIRE(traj.r2c > 0.0);
    } else {
      REQUIRE(traj.r2c == 0.0);
    }
  }
  CHECK(finished > 0);
}

TEST_CASE("property: replaying actions reproduces the signals") {
  Rng rng(19);
  auto act = uniform_policy(rng);
  for (int i = 0; i < 200; ++i) {
    const auto inst = random_small_instance(rng, 7, 4);
    for (bool tolerant : {true, false}) {
      const auto traj = run_episode(inst, act, tolerant);
      std::vector<int> actions;
      for (const auto& tr : traj.transitions) actions.push_back(tr.action);
      const auto again = replay(inst, actions, tolerant);
      REQUIRE(again.transitions.size() == traj.transitions.size());
      for (std::size_t t = 0; t < actions.size(); ++t) {
        REQUIRE(again.transitions[t].reward == traj.transitions[t].reward);
        REQUIRE(again.transitions[t].h == traj.transitions[t].h);
        REQUIRE(again.transitions[t].c == traj.transitions[t].c);
      }
      REQUIRE(again.r2c == traj.r2c);
    }
  }
}

TEST_CASE("trajectory cost summaries") {
  Trajectory traj;
  for (double c : {0.0, 2.0, 1.5}) {
    Transition tr;
    tr.c = c;
    traj.transitions.push_back(tr);
  }
  CHECK(traj.total_cost() == 3.5);
  CHECK(traj.max_cost() == 2.0);
}
