#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "vnelab/cmdp_env.hpp"
#include "vnelab/policy.hpp"
#include "vnelab/sim_engine.hpp"
#include "vnelab/solver.hpp"

namespace vnelab {

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double lr = 1e-3;
  double lambda_lr_scale = 0.1;  // multiplier network steps at lr * lambda_lr_scale
  int batch_size = 128;  // transitions per minibatch and per collection wave
  int epochs = 4;
  double w_ppo = 1.0;
  double w_r = 0.5;
  double w_h = 0.5;
  double w_lam = 0.1;
  double w_cl = 0.001;
  int sync_interval = 10;  // waves between surrogate synchronisations
  int updates = 200;       // collection waves
  double augment_eps = 1.0;
  double barlow_weight = 5e-3;
  int contrast_states = 4;       // states per minibatch fed to the contrastive loss
  double violation_scale = 0.01;  // applied to violation-derived loss terms
  bool adaptive_budget = true;
  bool discounted_reach = false;
  int k_paths = 5;
  std::uint64_t seed = 0;
  int pool_requests = 400;  // instances captured from the background simulation
  int eval_instances = 50;

  PolicyConfig policy;
  SimulationConfig sim;

  /// Assigns a key of this config, its policy config (`policy.` prefix) or
  /// its simulation config (`sim.` prefix or bare key). Returns false when
  /// unknown; throws ConfigError on unparsable values.
  bool set(std::string_view key, std::string_view value);
  void validate() const;
};

/// Small setting used for smoke tests: 20-node PN, hidden 32, 2 layers.
TrainConfig tiny_train_config();

/// Instances seen by a solver during a background simulation.
class InstanceStream {
 public:
  InstanceStream() = default;
  explicit InstanceStream(std::vector<VNEInstance> pool) : pool_(std::move(pool)) {}
  /// Captures every arrival of a GRC-driven simulation of `sim`.
  static InstanceStream from_simulation(const SimulationConfig& sim);

  const VNEInstance& sample(Rng& rng) const;
  const std::vector<VNEInstance>& pool() const { return pool_; }
  std::size_t size() const { return pool_.size(); }

 private:
  std::vector<VNEInstance> pool_;
};

/// Max of the surrogate trajectory's recorded costs.
double compute_budget(const Trajectory& surrogate);

/// target_t = max(h_t, target_{t+1}); with `discounted`, max(h_t, gamma * target_{t+1}).
std::vector<double> reachability_targets(const Trajectory& traj, bool discounted = false,
                                         double gamma = 0.99);

struct RolloutSample {
  EnvState state;
  std::vector<char> mask;
  int action = -1;
  double old_log_prob = 0.0;
  double ret = 0.0;           // discounted return
  double adv_r = 0.0;         // normalised GAE
  double reach_target = 0.0;  // suffix max of h
  double adv_h = 0.0;         // scaled target minus reachability prediction
  double budget = 0.0;
  double lambda = 0.0;  // multiplier at collection time
  double value_r = 0.0;
  double value_h = 0.0;
};

struct RolloutBatch {
  std::vector<RolloutSample> samples;
  std::vector<Trajectory> trajectories;
  std::vector<double> budgets;  // one per trajectory
  double reward_mean = 0.0;     // mean terminal reward per episode
  double cost_mean = 0.0;       // mean per-step cost
  double c_vio = 0.0;           // summed cost of infeasible episodes
  double lambda_mean = 0.0;
  double lambda_max = 0.0;
};

/// Runs `episodes` tolerant episodes with sampled actions, a greedy tolerant
/// surrogate episode per instance for the budget, and fills targets and
/// advantages.
RolloutBatch collect_rollouts(ConalPolicy& policy, ConalPolicy& surrogate,
                              const InstanceStream& stream, int episodes, const TrainConfig& cfg,
                              Rng& rng);

/// Greedy (argmax) action of a policy at a state.
int greedy_action(ConalPolicy& policy, const EnvState& state);

struct LossParts {
  ad::Tensor ppo;
  ad::Tensor reward_critic;
  ad::Tensor reach_critic;
  ad::Tensor lambda;
  ad::Tensor contrast;
  ad::Tensor total;
};

/// Evaluates every loss term over the samples at `indices` on one tape. The
/// contrastive term is skipped (constant 0) when its weight is 0.
LossParts compute_losses(ad::Tape& tape, ConalPolicy& policy, const RolloutBatch& batch,
                         const std::vector<std::size_t>& indices, const TrainConfig& cfg,
                         Rng& rng);

/// Clipped-ratio policy loss alone.
ad::Tensor ppo_policy_loss(ad::Tape& tape, ConalPolicy& policy, const RolloutBatch& batch,
                           const std::vector<std::size_t>& indices, const TrainConfig& cfg);

/// Multiplier loss alone.
ad::Tensor lambda_loss(ad::Tape& tape, ConalPolicy& policy, const RolloutBatch& batch,
                       const std::vector<std::size_t>& indices, const TrainConfig& cfg);

struct CurveRow {
  int update = 0;
  double reward_mean = 0.0;
  double cost_mean = 0.0;
  double c_vio = 0.0;
  double lambda_mean = 0.0;
  double lambda_max = 0.0;
  double loss_total = 0.0;
  double loss_ppo = 0.0;
  double loss_r = 0.0;
  double loss_h = 0.0;
  double loss_lam = 0.0;
  double loss_cl = 0.0;
};

void write_curves_csv(std::ostream& out, const std::vector<CurveRow>& rows);

struct TrainResult {
  ConalPolicy policy;
  ConalPolicy surrogate;
  std::vector<CurveRow> curves;
  double max_lambda = 0.0;
  int syncs = 0;
};

/// Called at the end of every update with the curve row, both policies and
/// whether the surrogate was synchronised in that update.
using UpdateObserver = std::function<void(const CurveRow&, const ConalPolicy& policy,
                                          const ConalPolicy& surrogate, bool synced)>;

/// Alternates collection waves and clipped-ratio updates. Throws
/// NonFiniteLoss with the loss breakdown when a loss turns non-finite.
TrainResult train(const TrainConfig& cfg, const InstanceStream& stream,
                  const UpdateObserver& observer = {});
TrainResult train(const TrainConfig& cfg);

/// Mean terminal reward of greedy strict-mode episodes.
double evaluate_greedy(ConalPolicy& policy, const std::vector<VNEInstance>& instances,
                       int k_paths = 5);

/// Greedy strict-mode decoding of a trained policy.
class ConalSolver : public Solver {
 public:
  explicit ConalSolver(ConalPolicy policy, int k_paths = 5)
      : policy_(std::move(policy)), k_paths_(k_paths) {}
  std::string name() const override { return "conal"; }
  SolveResult solve(const VNEInstance& inst) override;

 private:
  ConalPolicy policy_;
  int k_paths_;
};

}  // namespace vnelab
