#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "vnelab/cmdp_env.hpp"
#include "vnelab/errors.hpp"
#include "vnelab/policy.hpp"
#include "vnelab/selfcheck.hpp"

using namespace vnelab;
using namespace vnelab::testing;

namespace {

PolicyConfig small_config(std::uint64_t seed = 0) {
  PolicyConfig c;
  c.hidden = 16;
  c.layers = 2;
  c.seed = seed;
  return c;
}

PhysicalNetwork permute(const PhysicalNetwork& pn, const std::vector<int>& perm) {
  PhysicalNetwork out;
  std::vector<int> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  for (int n : inverse) out.add_node(pn.node_capacity(n));
  for (int n = 0; n < pn.num_nodes(); ++n) out.set_node_available(perm[n], pn.node_available(n));
  for (int l = 0; l < pn.num_links(); ++l) {
    const auto& e = pn.topology().link(l);
    out.add_link(perm[e.u], perm[e.v], pn.link_capacity(l));
    out.set_link_available(l, pn.link_available(l));
  }
  return out;
}

std::vector<int> shuffled(int n, Rng& rng) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  return p;
}

struct Heads {
  ad::Matrix zp;
  ad::Matrix log_probs;
  double critic, reach, lambda;
};

Heads run_heads(ConalPolicy& policy, const EnvState& s) {
  ad::Tape tape;
  ParamBinder p(tape, policy.params());
  const auto g = build_hetero_graph(s);
  const auto enc = policy.encode(p, g);
  return {enc.zp.value(), policy.actor_log_probs(p, enc, action_mask(s)).value(),
          policy.critic_value(p, enc).item(), policy.reach_value(p, enc).item(),
          policy.lambda_value(p, enc).item()};
}

}  // namespace

TEST_CASE("graph construction at the first step and after one placement") {
  VNEInstance inst;
  inst.pn = make_pn({40, 40, 40}, {{0, 1, 10}, {0, 2, 30}});
  inst.vn = make_vn({5, 3}, {{0, 1, 2}});
  auto s = reset(inst);
  auto g = build_hetero_graph(s);
  CHECK(g.mapped.empty());
  CHECK(g.decision.size() == 3);
  CHECK(g.xv.cols() == kNodeFeatures);
  // node 0 has adjacent bandwidths {10, 30}
  CHECK(g.xp(0, 2) * g.bandwidth_scale == doctest::Approx(30.0));
  CHECK(g.xp(0, 3) * g.bandwidth_scale == doctest::Approx(10.0));
  CHECK(g.xp(0, 4) * g.bandwidth_scale == doctest::Approx(20.0));
  step(s, 0, true);
  g = build_hetero_graph(s);
  CHECK(g.mapped.size() == 1);
  CHECK(g.decision.size() == 2);
  for (const auto& [v, p] : g.decision) {
    CHECK(v == g.current);
    CHECK(p != 0);
  }
}

TEST_CASE("actor distributions are normalised and respect the mask") {
  Rng rng(1);
  ConalPolicy policy(small_config());
  for (int i = 0; i < 50; ++i) {
    const auto inst = random_small_instance(rng, 7, 4);
    auto s = reset(inst);
    const auto first = action_mask(s);
    step(s, static_cast<int>(std::find(first.begin(), first.end(), 1) - first.begin()), true);
    const auto mask = action_mask(s);
    const auto probs = policy.action_probs(s);
    double total = 0;
    for (std::size_t p = 0; p < probs.size(); ++p) {
      if (!mask[p]) REQUIRE(probs[p] == 0.0);
      total += probs[p];
    }
    REQUIRE(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("a single unmasked node receives all probability") {
  ad::Tape tape;
  ConalPolicy policy(small_config());
  ParamBinder p(tape, policy.params());
  VNEInstance inst;
  inst.pn = make_pn({40, 1, 1}, {{0, 1, 10}, {1, 2, 30}});
  inst.vn = make_vn({5}, {});
  const auto s = reset(inst);
  const auto enc = policy.encode(p, build_hetero_graph(s));
  const auto lp = policy.actor_log_probs(p, enc, action_mask(s)).value();
  CHECK(std::exp(lp(0, 0)) == 1.0);
  CHECK_THROWS_AS(policy.actor_log_probs(p, enc, {0, 0, 0}), EmptyMask);
}

TEST_CASE("symmetric physical nodes get equal probabilities") {
  VNEInstance inst;
  inst.pn = make_pn({40, 40, 40}, {{0, 1, 20}, {1, 2, 20}, {0, 2, 20}});
  inst.vn = make_vn({5, 3}, {{0, 1, 2}});
  ConalPolicy policy(small_config(3));
  const auto probs = policy.action_probs(reset(inst));
  CHECK(probs[0] == doctest::Approx(1.0 / 3.0));
  CHECK(probs[1] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("property: physical permutations permute embeddings and keep scalars") {
  Rng rng(2);
  ConalPolicy policy(small_config(5));
  for (int i = 0; i < 20; ++i) {
    VNEInstance inst = random_small_instance(rng, 7, 3);
    const auto perm = shuffled(inst.pn.num_nodes(), rng);
    VNEInstance moved = inst;
    moved.pn = permute(inst.pn, perm);
    auto s1 = reset(inst);
    auto s2 = reset(moved);
    const auto m1 = action_mask(s1);
    int a = 0;
    while (!m1[static_cast<std::size_t>(a)]) ++a;
    step(s1, a, true);
    step(s2, perm[static_cast<std::size_t>(a)], true);
    const auto h1 = run_heads(policy, s1);
    const auto h2 = run_heads(policy, s2);
    for (int n = 0; n < inst.pn.num_nodes(); ++n) {
      const int m = perm[static_cast<std::size_t>(n)];
      for (int c = 0; c < h1.zp.cols(); ++c) REQUIRE(h2.zp(m, c) == doctest::Approx(h1.zp(n, c)).epsilon(1e-9));
      if (std::isfinite(h1.log_probs(n, 0)))
        REQUIRE(h2.log_probs(m, 0) == doctest::Approx(h1.log_probs(n, 0)).epsilon(1e-9));
      else
        REQUIRE(std::isinf(h2.log_probs(m, 0)));
    }
    CHECK(h2.critic == doctest::Approx(h1.critic).epsilon(1e-9));
    CHECK(h2.reach == doctest::Approx(h1.reach).epsilon(1e-9));
    CHECK(h2.lambda == doctest::Approx(h1.lambda).epsilon(1e-9));
  }
}

TEST_CASE("property: the multiplier head is nonnegative") {
  Rng rng(3);
  ConalPolicy policy(small_config(7));
  // Push the head toward large negative pre-activations too.
  for (auto& e : policy.params().entries())
    if (e.name.starts_with("lambda.")) e.value *= 20.0;
  for (int i = 0; i < 1000; ++i) {
    const auto inst = random_small_instance(rng, 6, 3);
    REQUIRE(run_heads(policy, reset(inst)).lambda >= 0.0);
  }
}

TEST_CASE("zeroed final layers return their bias") {
  ConalPolicy policy(small_config(9));
  policy.params().value("critic.w2").setZero();
  policy.params().value("critic.b2")(0, 0) = 0.625;
  Rng rng(4);
  for (int i = 0; i < 5; ++i)
    CHECK(run_heads(policy, reset(random_small_instance(rng))).critic == 0.625);
}

TEST_CASE("physical augmentation") {
  VNEInstance inst;
  inst.pn = make_pn({40, 40, 40, 40}, {{0, 1, 20}, {1, 2, 20}, {2, 3, 20}});
  inst.vn = make_vn({5, 3, 2}, {{0, 1, 10}, {1, 2, 14}});
  const auto g = build_hetero_graph(reset(inst));
  Rng rng(5);
  const auto same = augment_physical(g, 0.0, rng);
  CHECK(same.p_links == g.p_links);
  const auto aug = augment_physical(g, 0.5, rng);
  REQUIRE(aug.p_links.size() == g.p_links.size() + 2);
  for (std::size_t l = g.p_links.size(); l < aug.p_links.size(); ++l) {
    CHECK(aug.p_bandwidth[l] == 9.0);
    CHECK_FALSE(inst.pn.topology().link_between(aug.p_links[l].u, aug.p_links[l].v).has_value());
  }
  CHECK(aug.xp.rows() == 4);
}

TEST_CASE("virtual augmentation") {
  VNEInstance inst;
  inst.pn = make_pn({40, 40, 40, 40}, {{0, 1, 20}, {1, 2, 20}, {2, 3, 20}});
  inst.vn = make_vn({5, 3, 2, 1}, {{0, 1, 10}, {1, 2, 14}, {2, 3, 1}});
  const auto g = build_hetero_graph(reset(inst));
  Rng rng(6);
  CHECK(augment_virtual(g, 0.0, rng).v_links == g.v_links);
  const auto aug = augment_virtual(g, 0.5, rng);
  REQUIRE(aug.v_links.size() == g.v_links.size() + 2);
  for (std::size_t l = g.v_links.size(); l < aug.v_links.size(); ++l) CHECK(aug.v_bandwidth[l] == 0.0);

  VNEInstance full = inst;
  full.vn = make_vn({5, 3, 2}, {{0, 1, 10}, {1, 2, 14}, {0, 2, 1}});
  const auto gf = build_hetero_graph(reset(full));
  CHECK(augment_virtual(gf, 1.0, rng).v_links == gf.v_links);
}

TEST_CASE("augmentations preserve feasibility") {
  const auto rep = feasibility_consistency(30, 77);
  CHECK(rep.pairs == 30);
  CHECK(rep.solutions > 0);
  CHECK_MESSAGE(rep.mismatches == 0, rep.first_mismatch);
}

TEST_CASE("redundancy-reduction loss reference values") {
  ad::Tape t;
  // Standardised, perpendicular columns: C = I.
  ad::Matrix z(4, 2);
  z << 1, 1, -1, 1, 1, -1, -1, -1;
  CHECK(barlow_twins_loss(t.constant(z), t.constant(z)).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(barlow_twins_loss(t.constant(z), t.constant(-z)).item() == doctest::Approx(8.0));
  ad::Matrix y(4, 2);
  y << 1, 2, 2, 1, 3, 5, 4, 3;
  const double off = barlow_twins_loss(t.constant(y), t.constant(y), 1.0).item();
  const double no_off = barlow_twins_loss(t.constant(y), t.constant(y), 0.0).item();
  CHECK(no_off == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(off > 0.0);
}

TEST_CASE("policies round-trip through checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "vnelab_policy_test";
  std::filesystem::create_directories(dir);
  const std::string prefix = (dir / "p").string();
  ConalPolicy policy(small_config(11));
  policy.save(prefix);
  const auto back = ConalPolicy::load(prefix);
  CHECK(back.params().values_equal(policy.params()));
  CHECK(back.config().hidden == 16);
  CHECK(PolicyConfig::from_json(policy.config().to_json()).layers == 2);

  PolicyConfig other = small_config();
  other.hidden = 8;
  ConalPolicy(other).save((dir / "q").string());
  std::filesystem::copy_file(dir / "q.json", dir / "p.json",
                             std::filesystem::copy_options::overwrite_existing);
  CHECK_THROWS_AS(ConalPolicy::load(prefix), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("policies with the same seed are identical") {
  CHECK(ConalPolicy(small_config(4)).params().values_equal(ConalPolicy(small_config(4)).params()));
  CHECK_FALSE(ConalPolicy(small_config(4)).params().values_equal(ConalPolicy(small_config(5)).params()));
}
