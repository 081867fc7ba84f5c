#include "vnelab/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "vnelab/constraint_core.hpp"
#include "vnelab/errors.hpp"
#include "vnelab/heuristics.hpp"

namespace vnelab {

using ad::Matrix;
using ad::Tensor;

namespace {

template <typename T>
T parse_value(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(std::string(key), "cannot parse '" + std::string(value) + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(std::string(key), "expected true or false, got '" + std::string(value) + "'");
}

bool set_policy(PolicyConfig& p, std::string_view key, std::string_view value) {
  if (key == "hidden") p.hidden = parse_value<int>(key, value);
  else if (key == "layers") p.layers = parse_value<int>(key, value);
  else if (key == "attention_slope") p.attention_slope = parse_value<double>(key, value);
  else if (key == "seed") p.seed = parse_value<std::uint64_t>(key, value);
  else if (key == "activation") {
    if (value == "relu") p.activation = Activation::Relu;
    else if (value == "tanh") p.activation = Activation::Tanh;
    else throw ConfigError("policy.activation", "expected relu or tanh");
  } else return false;
  return true;
}

}  // namespace

bool TrainConfig::set(std::string_view key, std::string_view value) {
  if (key.starts_with("policy.")) return set_policy(policy, key.substr(7), value);
  if (key.starts_with("sim.")) return sim.set(key.substr(4), value);
  if (!key.starts_with("train.")) return sim.set(key, value);
  const std::string_view k = key.substr(6);
  auto dbl = [&](double& f) { f = parse_value<double>(key, value); };
  auto integer = [&](int& f) { f = parse_value<int>(key, value); };
  if (k == "gamma") dbl(gamma);
  else if (k == "gae_lambda") dbl(gae_lambda);
  else if (k == "clip") dbl(clip);
  else if (k == "lr") dbl(lr);
  else if (k == "lambda_lr_scale") dbl(lambda_lr_scale);
  else if (k == "batch_size") integer(batch_size);
  else if (k == "epochs") integer(epochs);
  else if (k == "w_ppo") dbl(w_ppo);
  else if (k == "w_r") dbl(w_r);
  else if (k == "w_h") dbl(w_h);
  else if (k == "w_lam") dbl(w_lam);
  else if (k == "w_cl") dbl(w_cl);
  else if (k == "sync_interval") integer(sync_interval);
  else if (k == "updates") integer(updates);
  else if (k == "augment_eps") dbl(augment_eps);
  else if (k == "barlow_weight") dbl(barlow_weight);
  else if (k == "contrast_states") integer(contrast_states);
  else if (k == "violation_scale") dbl(violation_scale);
  else if (k == "adaptive_budget") adaptive_budget = parse_bool(key, value);
  else if (k == "discounted_reach") discounted_reach = parse_bool(key, value);
  else if (k == "k_paths") integer(k_paths);
  else if (k == "seed") seed = parse_value<std::uint64_t>(key, value);
  else if (k == "pool_requests") integer(pool_requests);
  else if (k == "eval_instances") integer(eval_instances);
  else return false;
  return true;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(gamma >= 0 && gamma <= 1, "train.gamma", "must lie in [0, 1]");
  require(gae_lambda >= 0 && gae_lambda <= 1, "train.gae_lambda", "must lie in [0, 1]");
  require(clip > 0, "train.clip", "must be positive");
  require(lr > 0, "train.lr", "must be positive");
  require(lambda_lr_scale > 0, "train.lambda_lr_scale", "must be positive");
  require(batch_size >= 1, "train.batch_size", "must be at least 1");
  require(epochs >= 1, "train.epochs", "must be at least 1");
  require(w_ppo >= 0 && w_r >= 0 && w_h >= 0 && w_lam >= 0 && w_cl >= 0, "train.w_*",
          "loss weights must be nonnegative");
  require(sync_interval >= 1, "train.sync_interval", "must be at least 1");
  require(updates >= 0, "train.updates", "must be nonnegative");
  require(augment_eps >= 0, "train.augment_eps", "must be nonnegative");
  require(k_paths >= 1, "train.k_paths", "must be at least 1");
  require(pool_requests >= 1, "train.pool_requests", "must be at least 1");
  require(policy.hidden >= 1, "policy.hidden", "must be at least 1");
  require(policy.layers >= 1, "policy.layers", "must be at least 1");
  sim.validate();
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.policy.hidden = 32;
  c.policy.layers = 2;
  c.sim.pn_nodes = 20;
  c.sim.arrival_rate = 0.02;
  c.updates = 200;
  return c;
}

InstanceStream InstanceStream::from_simulation(const SimulationConfig& sim) {
  std::vector<VNEInstance> pool;
  NodeRankSolver grc(RankingKind::Grc);
  SimulationHooks hooks;
  hooks.on_instance = [&](const VNEInstance& inst) { pool.push_back(inst); };
  run_simulation(grc, sim, hooks);
  return InstanceStream(std::move(pool));
}

const VNEInstance& InstanceStream::sample(Rng& rng) const {
  if (pool_.empty()) throw EmptyRecord("instance stream is empty");
  return pool_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool_.size()) - 1))];
}

double compute_budget(const Trajectory& surrogate) { return surrogate.max_cost(); }

std::vector<double> reachability_targets(const Trajectory& traj, bool discounted, double gamma) {
  const auto n = traj.transitions.size();
  std::vector<double> out(n);
  for (std::size_t i = n; i-- > 0;) {
    const double h = traj.transitions[i].h;
    if (i + 1 == n)
      out[i] = h;
    else
      out[i] = std::max(h, discounted ? gamma * out[i + 1] : out[i + 1]);
  }
  return out;
}

namespace {

struct Forward {
  std::vector<double> probs;
  double value_r = 0.0;
  double value_h = 0.0;
  double lambda = 0.0;
};

Forward forward_all(ConalPolicy& policy, const EnvState& state, const std::vector<char>& mask) {
  ad::Tape tape;
  ParamBinder binder(tape, policy.params());
  const HeteroGraph g = build_hetero_graph(state);
  const Encoding enc = policy.encode(binder, g);
  const Tensor lp = policy.actor_log_probs(binder, enc, mask);
  Forward f;
  f.probs.resize(static_cast<std::size_t>(g.num_p));
  for (int i = 0; i < g.num_p; ++i) f.probs[i] = std::exp(lp.value()(i, 0));
  f.value_r = policy.critic_value(binder, enc).item();
  f.value_h = policy.reach_value(binder, enc).item();
  f.lambda = policy.lambda_value(binder, enc).item();
  return f;
}

int argmax_masked(const std::vector<double>& probs, const std::vector<char>& mask) {
  int best = -1;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (mask[i] && (best < 0 || probs[i] > probs[static_cast<std::size_t>(best)]))
      best = static_cast<int>(i);
  if (best < 0) throw EmptyMask("no selectable action");
  return best;
}

int sample_masked(const std::vector<double>& probs, const std::vector<char>& mask, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!mask[i]) continue;
    last = static_cast<int>(i);
    acc += probs[i];
    if (u < acc) return last;
  }
  if (last < 0) throw EmptyMask("no selectable action");
  return last;
}

}  // namespace

int greedy_action(ConalPolicy& policy, const EnvState& state) {
  const auto mask = action_mask(state);
  return argmax_masked(policy.action_probs(state), mask);
}

RolloutBatch collect_rollouts(ConalPolicy& policy, ConalPolicy& surrogate,
                              const InstanceStream& stream, int episodes, const TrainConfig& cfg,
                              Rng& rng) {
  RolloutBatch batch;
  double cost_sum = 0.0;
  std::size_t steps = 0;
  for (int e = 0; e < episodes; ++e) {
    auto inst = std::make_shared<const VNEInstance>(stream.sample(rng));

    Trajectory traj;
    std::vector<Forward> fwd;
    EnvState state = reset(inst, OrderPolicy::DescendingDemand, cfg.k_paths);
    while (!state.done) {
      Transition tr;
      tr.state = state;
      tr.mask = action_mask(state);
      Forward f = forward_all(policy, state, tr.mask);
      tr.action = sample_masked(f.probs, tr.mask, rng);
      if (!tr.mask[static_cast<std::size_t>(tr.action)])
        throw InvalidAction("sampler picked a masked action");
      tr.log_prob = std::log(f.probs[static_cast<std::size_t>(tr.action)]);
      const StepOutcome o = step(state, tr.action, true);
      tr.reward = o.reward;
      tr.h = o.h;
      tr.c = o.c;
      tr.done = o.done;
      if (o.done) traj.r2c = o.reward;
      traj.transitions.push_back(std::move(tr));
      fwd.push_back(std::move(f));
    }
    traj.solution = state.partial;
    traj.feasible = state.partial.feasible;

    double budget = 0.0;
    if (cfg.adaptive_budget) {
      const Trajectory sur = run_episode(
          *inst,
          [&](const EnvState& s, const std::vector<char>& mask) {
            return std::make_pair(argmax_masked(surrogate.action_probs(s), mask), 0.0);
          },
          true, OrderPolicy::DescendingDemand, cfg.k_paths);
      budget = compute_budget(sur);
    }

    const auto targets = reachability_targets(traj, cfg.discounted_reach, cfg.gamma);
    const std::size_t n = traj.transitions.size();
    std::vector<double> ret(n), adv(n);
    double g_next = 0.0, a_next = 0.0;
    for (std::size_t i = n; i-- > 0;) {
      const auto& tr = traj.transitions[i];
      const double v_next = tr.done ? 0.0 : fwd[i + 1].value_r;
      g_next = tr.reward + cfg.gamma * (tr.done ? 0.0 : g_next);
      ret[i] = g_next;
      const double delta = tr.reward + cfg.gamma * v_next - fwd[i].value_r;
      a_next = delta + cfg.gamma * cfg.gae_lambda * (tr.done ? 0.0 : a_next);
      adv[i] = a_next;
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& tr = traj.transitions[i];
      tr.budget = budget;
      RolloutSample s;
      s.state = tr.state;
      s.mask = tr.mask;
      s.action = tr.action;
      s.old_log_prob = tr.log_prob;
      s.ret = ret[i];
      s.adv_r = adv[i];
      s.reach_target = targets[i];
      s.value_r = fwd[i].value_r;
      s.value_h = fwd[i].value_h;
      s.adv_h = cfg.violation_scale * targets[i] - fwd[i].value_h;
      s.budget = budget;
      s.lambda = fwd[i].lambda;
      batch.lambda_max = std::max(batch.lambda_max, s.lambda);
      batch.lambda_mean += s.lambda;
      cost_sum += tr.c;
      ++steps;
      batch.samples.push_back(std::move(s));
    }
    batch.reward_mean += traj.r2c;
    if (!traj.feasible) batch.c_vio += traj.total_cost();
    batch.budgets.push_back(budget);
    batch.trajectories.push_back(std::move(traj));
  }
  if (episodes > 0) batch.reward_mean /= episodes;
  if (steps > 0) {
    batch.cost_mean = cost_sum / static_cast<double>(steps);
    batch.lambda_mean /= static_cast<double>(steps);
  }

  if (batch.samples.size() > 1) {
    double mean = 0.0, sq = 0.0;
    for (const auto& s : batch.samples) mean += s.adv_r;
    mean /= static_cast<double>(batch.samples.size());
    for (const auto& s : batch.samples) sq += (s.adv_r - mean) * (s.adv_r - mean);
    const double sd = std::sqrt(sq / static_cast<double>(batch.samples.size()));
    for (auto& s : batch.samples) s.adv_r = sd > 1e-8 ? (s.adv_r - mean) / sd : s.adv_r - mean;
  }
  return batch;
}

namespace {

struct SampleHeads {
  Tensor log_prob;  // 1x1, chosen action
  Tensor value_r;
  Tensor value_h;
  Tensor lambda;
};

SampleHeads heads_for(ParamBinder& binder, ConalPolicy& policy, const RolloutSample& s) {
  const HeteroGraph g = build_hetero_graph(s.state);
  const Encoding enc = policy.encode(binder, g);
  const Tensor lp = policy.actor_log_probs(binder, enc, s.mask);
  return {ad::gather_rows(lp, {s.action}), policy.critic_value(binder, enc),
          policy.reach_value(binder, enc), policy.lambda_value(binder, enc)};
}

Tensor column(ad::Tape& tape, const std::vector<double>& v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return tape.constant(std::move(m));
}

Tensor clipped_objective(ad::Tape& tape, const Tensor& log_probs, const RolloutBatch& batch,
                         const std::vector<std::size_t>& indices, const TrainConfig& cfg) {
  std::vector<double> old_lp, adv;
  for (std::size_t i : indices) {
    const auto& s = batch.samples[i];
    old_lp.push_back(s.old_log_prob);
    adv.push_back(s.adv_r - s.lambda * s.adv_h);
  }
  const Tensor a = column(tape, adv);
  const Tensor ratio = ad::exp(ad::sub(log_probs, column(tape, old_lp)));
  const Tensor surr1 = ad::mul(ratio, a);
  const Tensor surr2 = ad::mul(ad::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), a);
  return ad::scale(ad::mean(ad::minimum(surr1, surr2)), -1.0);
}

Tensor multiplier_objective(ad::Tape& tape, const Tensor& lambdas, const Tensor& reach,
                            const RolloutBatch& batch, const std::vector<std::size_t>& indices,
                            const TrainConfig& cfg) {
  std::vector<double> gap;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& s = batch.samples[indices[k]];
    gap.push_back(reach.value()(static_cast<Eigen::Index>(k), 0) -
                  cfg.violation_scale * s.budget);
  }
  return ad::scale(ad::mean(ad::mul(lambdas, column(tape, gap))), -1.0);
}

}  // namespace

LossParts compute_losses(ad::Tape& tape, ConalPolicy& policy, const RolloutBatch& batch,
                         const std::vector<std::size_t>& indices, const TrainConfig& cfg,
                         Rng& rng) {
  if (indices.empty()) throw EmptyRecord("loss over an empty minibatch");
  ParamBinder binder(tape, policy.params());
  std::vector<Tensor> lps, vrs, vhs, lams;
  std::vector<double> rets, reach_targets;
  for (std::size_t i : indices) {
    const auto& s = batch.samples[i];
    SampleHeads h = heads_for(binder, policy, s);
    lps.push_back(h.log_prob);
    vrs.push_back(h.value_r);
    vhs.push_back(h.value_h);
    lams.push_back(h.lambda);
    rets.push_back(s.ret);
    reach_targets.push_back(cfg.violation_scale * s.reach_target);
  }
  const Tensor lp = ad::concat_rows(lps);
  const Tensor vr = ad::concat_rows(vrs);
  const Tensor vh = ad::concat_rows(vhs);
  const Tensor lam = ad::concat_rows(lams);

  LossParts parts;
  parts.ppo = clipped_objective(tape, lp, batch, indices, cfg);
  parts.reward_critic = ad::mse(vr, column(tape, rets));
  parts.reach_critic = ad::mse(vh, column(tape, reach_targets));
  parts.lambda = multiplier_objective(tape, lam, vh, batch, indices, cfg);

  if (cfg.w_cl > 0.0 && cfg.contrast_states > 0) {
    std::vector<std::size_t> pick(indices);
    const std::size_t take = std::min(pick.size(), static_cast<std::size_t>(cfg.contrast_states));
    for (std::size_t i = 0; i < take; ++i) {
      const int j = rng.uniform_int(static_cast<int>(i), static_cast<int>(pick.size()) - 1);
      std::swap(pick[i], pick[static_cast<std::size_t>(j)]);
    }
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < take; ++i) {
      const HeteroGraph g = build_hetero_graph(batch.samples[pick[i]].state);
      const HeteroGraph ga = augment_physical(g, cfg.augment_eps, rng);
      const HeteroGraph gb = augment_virtual(g, cfg.augment_eps, rng);
      const Encoding ea = policy.encode(binder, ga);
      const Encoding eb = policy.encode(binder, gb);
      terms.push_back(barlow_twins_loss(ad::concat_rows({ea.zv, ea.zp}),
                                        ad::concat_rows({eb.zv, eb.zp}), cfg.barlow_weight));
    }
    parts.contrast = ad::mean(ad::concat_rows(terms));
  } else {
    parts.contrast = tape.constant(0.0);
  }

  parts.total = ad::add(
      ad::add(ad::add(ad::scale(parts.ppo, cfg.w_ppo), ad::scale(parts.reward_critic, cfg.w_r)),
              ad::add(ad::scale(parts.reach_critic, cfg.w_h), ad::scale(parts.lambda, cfg.w_lam))),
      ad::scale(parts.contrast, cfg.w_cl));
  return parts;
}

Tensor ppo_policy_loss(ad::Tape& tape, ConalPolicy& policy, const RolloutBatch& batch,
                       const std::vector<std::size_t>& indices, const TrainConfig& cfg) {
  ParamBinder binder(tape, policy.params());
  std::vector<Tensor> lps;
  for (std::size_t i : indices) lps.push_back(heads_for(binder, policy, batch.samples[i]).log_prob);
  return clipped_objective(tape, ad::concat_rows(lps), batch, indices, cfg);
}

Tensor lambda_loss(ad::Tape& tape, ConalPolicy& policy, const RolloutBatch& batch,
                   const std::vector<std::size_t>& indices, const TrainConfig& cfg) {
  ParamBinder binder(tape, policy.params());
  std::vector<Tensor> lams, vhs;
  for (std::size_t i : indices) {
    SampleHeads h = heads_for(binder, policy, batch.samples[i]);
    lams.push_back(h.lambda);
    vhs.push_back(h.value_h);
  }
  return multiplier_objective(tape, ad::concat_rows(lams), ad::concat_rows(vhs), batch, indices,
                              cfg);
}

void write_curves_csv(std::ostream& out, const std::vector<CurveRow>& rows) {
  out << "update,reward_mean,cost_mean,c_vio,lambda_mean,loss_total,lambda_max,loss_ppo,"
         "loss_r,loss_h,loss_lam,loss_cl\n";
  for (const auto& r : rows) {
    out << r.update << ',' << format_double(r.reward_mean) << ',' << format_double(r.cost_mean)
        << ',' << format_double(r.c_vio) << ',' << format_double(r.lambda_mean) << ','
        << format_double(r.loss_total) << ',' << format_double(r.lambda_max) << ','
        << format_double(r.loss_ppo) << ',' << format_double(r.loss_r) << ','
        << format_double(r.loss_h) << ',' << format_double(r.loss_lam) << ','
        << format_double(r.loss_cl) << '\n';
  }
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  SimulationConfig sim = cfg.sim;
  sim.num_requests = cfg.pool_requests;
  return train(cfg, InstanceStream::from_simulation(sim));
}

TrainResult train(const TrainConfig& cfg, const InstanceStream& stream,
                  const UpdateObserver& observer) {
  cfg.validate();
  TrainResult res{ConalPolicy(cfg.policy), ConalPolicy(cfg.policy), {}, 0.0, 0};
  ConalPolicy& policy = res.policy;
  ConalPolicy& surrogate = res.surrogate;
  ad::Adam adam;
  adam.lr = cfg.lr;
  adam.lr_scales = {{"lambda.", cfg.lambda_lr_scale}};
  Rng rng(cfg.seed);
  const int episodes = std::max(1, static_cast<int>(std::ceil(cfg.batch_size / 6.0)));

  for (int u = 1; u <= cfg.updates; ++u) {
    const RolloutBatch batch = collect_rollouts(policy, surrogate, stream, episodes, cfg, rng);
    res.max_lambda = std::max(res.max_lambda, batch.lambda_max);

    CurveRow row;
    row.update = u;
    row.reward_mean = batch.reward_mean;
    row.cost_mean = batch.cost_mean;
    row.c_vio = batch.c_vio;
    row.lambda_mean = batch.lambda_mean;
    row.lambda_max = batch.lambda_max;
    int steps = 0;

    std::vector<std::size_t> order(batch.samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i) {
        const int j = rng.uniform_int(0, static_cast<int>(i) - 1);
        std::swap(order[i - 1], order[static_cast<std::size_t>(j)]);
      }
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end =
            std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
        ad::Tape tape;
        const LossParts parts = compute_losses(tape, policy, batch, idx, cfg, rng);
        const double total = parts.total.item();
        if (!std::isfinite(total)) {
          std::ostringstream msg;
          msg << "non-finite loss at update " << u << ": ppo=" << parts.ppo.item()
              << " r=" << parts.reward_critic.item() << " h=" << parts.reach_critic.item()
              << " lam=" << parts.lambda.item() << " cl=" << parts.contrast.item();
          throw NonFiniteLoss(msg.str());
        }
        policy.params().zero_grad();
        tape.backward(parts.total);
        // Edge types absent from every sampled state leave their weights off the tape.
        for (auto& e : policy.params().entries()) e.has_grad = true;
        adam.step(policy.params());
        row.loss_total += total;
        row.loss_ppo += parts.ppo.item();
        row.loss_r += parts.reward_critic.item();
        row.loss_h += parts.reach_critic.item();
        row.loss_lam += parts.lambda.item();
        row.loss_cl += parts.contrast.item();
        ++steps;
      }
    }
    if (steps > 0) {
      row.loss_total /= steps;
      row.loss_ppo /= steps;
      row.loss_r /= steps;
      row.loss_h /= steps;
      row.loss_lam /= steps;
      row.loss_cl /= steps;
    }
    res.curves.push_back(row);

    const bool sync = u % cfg.sync_interval == 0;
    if (sync) {
      surrogate.params().copy_values_from(policy.params());
      ++res.syncs;
    }
    if (observer) observer(row, policy, surrogate, sync);
  }
  return res;
}

double evaluate_greedy(ConalPolicy& policy, const std::vector<VNEInstance>& instances,
                       int k_paths) {
  if (instances.empty()) return 0.0;
  double total = 0.0;
  for (const auto& inst : instances) {
    const Trajectory traj = run_episode(
        inst,
        [&](const EnvState& s, const std::vector<char>& mask) {
          return std::make_pair(argmax_masked(policy.action_probs(s), mask), 0.0);
        },
        false, OrderPolicy::DescendingDemand, k_paths);
    total += traj.r2c;
  }
  return total / static_cast<double>(instances.size());
}

SolveResult ConalSolver::solve(const VNEInstance& inst) {
  const Trajectory traj = run_episode(
      inst,
      [&](const EnvState& s, const std::vector<char>& mask) {
        return std::make_pair(argmax_masked(policy_.action_probs(s), mask), 0.0);
      },
      false, OrderPolicy::DescendingDemand, k_paths_);
  SolveResult res;
  res.solution = traj.solution;
  res.violation = traj.total_cost();
  return res;
}

}  // namespace vnelab
