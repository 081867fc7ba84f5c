#include "vnelab/selfcheck.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "vnelab/cmdp_env.hpp"
#include "vnelab/constraint_core.hpp"
#include "vnelab/heuristics.hpp"
#include "vnelab/policy.hpp"
#include "vnelab/sim_engine.hpp"
#include "vnelab/trainer.hpp"

namespace vnelab {

VNEInstance random_small_instance(Rng& rng, int max_pn, int max_vn) {
  VNEInstance inst;
  const int np = rng.uniform_int(3, max_pn);
  inst.pn = gen_waxman(np, 0.5, 0.6, rng, 5.0, 25.0, 5.0, 25.0);
  for (int n = 0; n < np; ++n)
    inst.pn.set_node_available(n, quantize_resource(inst.pn.node_capacity(n) * rng.uniform(0.3, 1.0)));
  for (int l = 0; l < inst.pn.num_links(); ++l)
    inst.pn.set_link_available(l, quantize_resource(inst.pn.link_capacity(l) * rng.uniform(0.3, 1.0)));

  SimulationConfig cfg;
  cfg.vn_size_min = 2;
  cfg.vn_size_max = std::min(max_vn, np);
  cfg.vn_compute_max = 12.0;
  cfg.vn_bandwidth_max = 12.0;
  inst.vn = gen_vn_request(cfg, 0.0, rng);
  return inst;
}

namespace {

using Key = std::pair<std::vector<int>, std::vector<Path>>;

struct CandidateWalk {
  const VNEInstance& inst;
  std::vector<std::vector<Path>> paths;  // np * np
  Solution sol;
  std::vector<char> used;
  std::function<void(const Solution&)> visit;

  explicit CandidateWalk(const VNEInstance& i) : inst(i) {
    const int np = inst.pn.num_nodes();
    paths.resize(static_cast<std::size_t>(np) * np);
    for (int a = 0; a < np; ++a)
      for (int b = 0; b < np; ++b)
        if (a != b) paths[static_cast<std::size_t>(a) * np + b] =
                        all_simple_paths(inst.pn.topology(), a, b, np);
    sol = Solution::empty_for(inst.vn);
    used.assign(static_cast<std::size_t>(np), 0);
  }

  void place(int v) {
    if (v == inst.vn.num_nodes()) return route(0);
    for (int p = 0; p < inst.pn.num_nodes(); ++p) {
      if (used[p]) continue;
      used[p] = 1;
      sol.node_map[v] = p;
      place(v + 1);
      used[p] = 0;
    }
    sol.node_map[v] = -1;
  }

  void route(int l) {
    if (l == inst.vn.num_links()) return visit(sol);
    const auto e = inst.vn.topology().link(l);
    const int np = inst.pn.num_nodes();
    const auto& options =
        paths[static_cast<std::size_t>(sol.node_map[e.u]) * np + sol.node_map[e.v]];
    for (const auto& path : options) {
      sol.link_map[l] = path;
      route(l + 1);
    }
    sol.link_map[l].clear();
  }
};

std::string describe(const VNEInstance& inst, const Solution& sol) {
  std::ostringstream os;
  os << "vn " << inst.vn.num_nodes() << "x" << inst.vn.num_links() << " pn "
     << inst.pn.num_nodes() << "x" << inst.pn.num_links() << " map";
  for (int p : sol.node_map) os << ' ' << p;
  return os.str();
}

}  // namespace

OracleReport oracle_verify(int instances, std::uint64_t seed) {
  OracleReport rep;
  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    const VNEInstance inst = random_small_instance(rng);
    std::map<Key, int> feasible_set;
    enumerate_feasible(inst, {}, [&](const Solution& s) {
      feasible_set[{s.node_map, s.link_map}] = 0;
    });
    CandidateWalk walk(inst);
    walk.visit = [&](const Solution& s) {
      ++rep.candidates;
      const bool expected = feasible_set.count({s.node_map, s.link_map}) > 0;
      const bool checked = check_solution(inst, s).feasible();
      const bool flow = check_flow_formulation(inst, s);
      if (expected) ++rep.feasible;
      if (checked != expected || flow != expected) {
        if (rep.disagreements == 0) rep.first_disagreement = describe(inst, s);
        ++rep.disagreements;
      }
    };
    walk.place(0);
    ++rep.instances;
  }
  return rep;
}

namespace {

std::set<Key> feasible_keys(const VNEInstance& inst) {
  std::set<Key> out;
  enumerate_feasible(inst, {}, [&](const Solution& s) { out.insert({s.node_map, s.link_map}); });
  return out;
}

std::set<std::vector<int>> feasible_maps(const VNEInstance& inst) {
  std::set<std::vector<int>> out;
  enumerate_feasible(inst, {}, [&](const Solution& s) { out.insert(s.node_map); });
  return out;
}

}  // namespace

ConsistencyReport feasibility_consistency(int pairs, std::uint64_t seed, double eps) {
  ConsistencyReport rep;
  Rng rng(seed);
  auto mismatch = [&](const std::string& what) {
    if (rep.mismatches == 0) rep.first_mismatch = "pair " + std::to_string(rep.pairs) + ": " + what;
    ++rep.mismatches;
  };
  for (int i = 0; i < pairs; ++i) {
    const VNEInstance raw = random_small_instance(rng);
    const HeteroGraph g = build_hetero_graph(reset(raw));
    const VNEInstance base = instance_from_graph(g);
    const VNEInstance with_p = instance_from_graph(augment_physical(g, eps, rng));
    const VNEInstance with_v = instance_from_graph(augment_virtual(g, eps, rng));
    const int extra = with_v.vn.num_links() - base.vn.num_links();

    if (feasible_keys(base) != feasible_keys(with_p)) mismatch("physical feasible sets differ");
    if (feasible_maps(base) != feasible_maps(with_v)) mismatch("virtual feasible maps differ");

    CandidateWalk walk(base);
    walk.visit = [&](const Solution& s) {
      const bool before = check_solution(base, s).feasible();
      ++rep.solutions;
      if (check_solution(with_p, s).feasible() != before) mismatch("physical verdict: " + describe(base, s));
      Solution ext = s;
      for (int l = base.vn.num_links(); l < base.vn.num_links() + extra; ++l) {
        const auto& e = with_v.vn.topology().link(l);
        ext.link_map.push_back(
            k_shortest_paths(base.pn.topology(), s.node_map[e.u], s.node_map[e.v], 1).front());
      }
      ++rep.solutions;
      if (check_solution(with_v, ext).feasible() != before) mismatch("virtual verdict: " + describe(base, s));
    };
    walk.place(0);
    ++rep.pairs;
  }
  return rep;
}

namespace {

using ad::Matrix;
using ad::Tape;
using ad::Tensor;

Matrix random_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

// Reduces an arbitrary output to a scalar through fixed random weights.
Tensor project(Tape& t, const Tensor& x, std::uint64_t salt) {
  Rng rng(salt);
  return ad::sum(ad::mul(x, t.constant(random_matrix(rng, x.rows(), x.cols()))));
}

}  // namespace

std::vector<GradCheckRow> gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckRow> rows;
  Rng rng(seed);
  auto check = [&](const std::string& family, const ad::ScalarFn& fn,
                   std::vector<Matrix> inputs) {
    rows.push_back({family, ad::grad_check(fn, std::move(inputs))});
  };

  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 3, 4);
  const Matrix pos = random_matrix(rng, 3, 4, 0.5, 2.0);
  const Matrix row = random_matrix(rng, 1, 4);
  const Matrix col = random_matrix(rng, 3, 1);
  const Matrix sq = random_matrix(rng, 4, 2);

  check("add", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::add(ad::add(x[0], x[1]), x[2]), 1);
  }, {a, row, col});
  check("sub", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::sub(ad::sub(x[0], x[1]), x[2]), 2);
  }, {a, b, row});
  check("mul", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::mul(ad::mul(x[0], x[1]), x[2]), 3);
  }, {a, b, col});
  check("div", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::div(ad::div(x[0], x[1]), x[2]), 4);
  }, {a, pos, Matrix::Constant(1, 1, 1.3)});
  check("scale", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::add_scalar(ad::scale(x[0], -1.7), 0.4), 5);
  }, {a});
  check("matmul", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::matmul(x[0], x[1]), 6);
  }, {a, sq});
  check("transpose", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::transpose(x[0]), 7);
  }, {a});
  check("minimum", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::minimum(x[0], x[1]), 8);
  }, {a, b});
  check("leaky_relu", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::leaky_relu(x[0], 0.2), 9);
  }, {a});
  check("relu", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::relu(x[0]), 10);
  }, {a});
  check("tanh", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::tanh(x[0]), 11);
  }, {a});
  check("softplus", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::softplus(x[0]), 12);
  }, {a});
  check("log", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::log(x[0]), 13);
  }, {pos});
  check("exp", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::exp(x[0]), 14);
  }, {a});
  check("sqrt", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::sqrt(x[0]), 15);
  }, {pos});
  check("square", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::square(x[0]), 16);
  }, {a});
  check("clamp", [](Tape& t, const std::vector<Tensor>& x) {
    return project(t, ad::clamp(x[0], -0.5, 0.5), 17);
  }, {a});
  check("reductions", [](Tape& t, const std::vector<Tensor>& x) {
    return ad::add(ad::add(ad::sum(ad::square(x[0])), ad::mean(x[0])),
                   ad::add(project(t, ad::sum_rows(x[0]), 18), project(t, ad::mean_rows(x[0]), 19)));
  }, {a});
  check("mse", [](Tape&, const std::vector<Tensor>& x) { return ad::mse(x[0], x[1]); }, {a, b});
  check("concat", [](Tape& t, const std::vector<Tensor>& x) {
    return ad::add(project(t, ad::concat_rows({x[0], x[1]}), 20),
                   project(t, ad::concat_cols({x[0], x[2]}), 21));
  }, {a, row, col});
  check("gather_slice", [](Tape& t, const std::vector<Tensor>& x) {
    return ad::add(project(t, ad::gather_rows(x[0], {2, 0, 2}), 22),
                   project(t, ad::slice_cols(x[0], 1, 2), 23));
  }, {a});
  check("segment", [](Tape& t, const std::vector<Tensor>& x) {
    const std::vector<int> seg = {0, 1, 0, 2, 1, 0};
    const Tensor sm = ad::segment_softmax(x[0], seg, 3);
    return ad::add(project(t, sm, 24), project(t, ad::segment_sum(ad::mul(x[1], sm), seg, 3), 25));
  }, {random_matrix(rng, 6, 1), random_matrix(rng, 6, 3)});
  check("masked_log_softmax", [](Tape& t, const std::vector<Tensor>& x) {
    const std::vector<char> mask = {1, 0, 1, 1, 0};
    const Tensor lp = ad::masked_log_softmax(x[0], mask);
    return project(t, ad::gather_rows(lp, {0, 2, 3}), 26);
  }, {random_matrix(rng, 5, 1)});
  check("barlow_twins", [](Tape&, const std::vector<Tensor>& x) {
    return barlow_twins_loss(x[0], x[1], 5e-3);
  }, {random_matrix(rng, 7, 3), random_matrix(rng, 7, 3)});

  // Full encoder, heads and weighted training loss on a rollout batch.
  TrainConfig cfg;
  cfg.policy.hidden = 8;
  cfg.policy.layers = 2;
  cfg.policy.seed = seed;
  cfg.contrast_states = 2;
  Rng inst_rng(seed + 17);
  std::vector<VNEInstance> pool;
  for (int i = 0; i < 2; ++i) pool.push_back(random_small_instance(inst_rng));
  const InstanceStream stream(std::move(pool));
  ConalPolicy policy(cfg.policy);
  ConalPolicy surrogate(cfg.policy);
  Rng roll_rng(seed + 29);
  const RolloutBatch batch = collect_rollouts(policy, surrogate, stream, 2, cfg, roll_rng);
  std::vector<std::size_t> idx(batch.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Stop-gradients in the multiplier term are invisible to finite
  // differences, so that term is probed on the multiplier head alone.
  TrainConfig no_lam = cfg;
  no_lam.w_lam = 0.0;
  const ad::ParamFn composite = [&](Tape& tape, ad::ParameterSet&) {
    Rng aug(seed + 41);
    return compute_losses(tape, policy, batch, idx, no_lam, aug).total;
  };
  rows.push_back({"composite", ad::grad_check_params(composite, policy.params(), 1e-5, 4, seed)});
  const ad::ParamFn multiplier = [&](Tape& tape, ad::ParameterSet&) {
    return lambda_loss(tape, policy, batch, idx, cfg);
  };
  rows.push_back({"composite_lambda",
                  ad::grad_check_params(multiplier, policy.params(), 1e-5, 0, seed,
                                        [](const std::string& n) { return n.starts_with("lambda."); })});
  return rows;
}

}  // namespace vnelab
