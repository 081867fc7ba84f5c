#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vnelab/cmdp_env.hpp"
#include "vnelab/net_model.hpp"
#include "vnelab/random.hpp"
#include "vnelab/tensor.hpp"

namespace vnelab {

/// Joint VN + PN graph of one decision step.
struct HeteroGraph {
  int num_v = 0;
  int num_p = 0;
  int current = -1;  // virtual node being decided

  // Raw resources: demands on the virtual side, availabilities on the physical side.
  std::vector<double> v_compute;
  std::vector<double> p_compute;
  std::vector<LinkEnds> v_links;
  std::vector<double> v_bandwidth;
  std::vector<LinkEnds> p_links;
  std::vector<double> p_bandwidth;
  std::vector<std::pair<int, int>> mapped;    // (virtual, physical)
  std::vector<std::pair<int, int>> decision;  // (current virtual, potential physical)

  double compute_scale = 1.0;    // PN maximum compute capacity
  double bandwidth_scale = 1.0;  // PN maximum bandwidth capacity

  // Normalised features, rebuilt by refresh_features().
  ad::Matrix xv;   // num_v x 5: compute, degree, max/min/avg adjacent bandwidth
  ad::Matrix xp;   // num_p x 5
  ad::Matrix xvl;  // |v_links| x 1
  ad::Matrix xpl;  // |p_links| x 1

  void refresh_features();
};

inline constexpr int kNodeFeatures = 5;

HeteroGraph build_hetero_graph(const EnvState& state);

/// Unit-capacity instance carried by a graph: PN capacities equal the raw
/// availabilities, VN demands the raw demands.
VNEInstance instance_from_graph(const HeteroGraph& g);

/// Adds floor(eps * num_p) physical links between random non-adjacent pairs,
/// each with bandwidth max(min virtual demand - 1, 0). Adds fewer, with a
/// warning, when the PN runs out of non-adjacent pairs.
HeteroGraph augment_physical(const HeteroGraph& g, double eps, Rng& rng);

/// Adds floor(eps * num_v) zero-demand virtual links between random
/// non-adjacent pairs; fewer when the VN is nearly complete.
HeteroGraph augment_virtual(const HeteroGraph& g, double eps, Rng& rng);

enum class Activation { Relu, Tanh };

struct PolicyConfig {
  int hidden = 128;
  int layers = 3;
  double attention_slope = 0.2;
  Activation activation = Activation::Relu;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static PolicyConfig from_json(const std::string& text);
};

/// Resolves parameter names to tape leaves once per tape.
class ParamBinder {
 public:
  ParamBinder(ad::Tape& tape, ad::ParameterSet& params) : tape_(tape), params_(params) {}
  ad::Tensor operator()(const std::string& name);
  ad::Tape& tape() { return tape_; }

 private:
  ad::Tape& tape_;
  ad::ParameterSet& params_;
  std::unordered_map<std::string, ad::Tensor> cache_;
};

struct Encoding {
  ad::Tensor zv;  // num_v x hidden
  ad::Tensor zp;  // num_p x hidden
};

/// Heterogeneous graph-attention encoder with actor, reward critic,
/// reachability critic and multiplier heads.
class ConalPolicy {
 public:
  explicit ConalPolicy(PolicyConfig config = {});
  ConalPolicy(PolicyConfig config, ad::ParameterSet params);

  const PolicyConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  Encoding encode(ParamBinder& p, const HeteroGraph& g) const;
  /// Masked log-probabilities over physical nodes (num_p x 1).
  ad::Tensor actor_log_probs(ParamBinder& p, const Encoding& enc,
                             const std::vector<char>& mask) const;
  ad::Tensor critic_value(ParamBinder& p, const Encoding& enc) const;
  ad::Tensor reach_value(ParamBinder& p, const Encoding& enc) const;
  /// Nonnegative multiplier. Reads the encoding as a constant, so its loss
  /// trains only the multiplier head.
  ad::Tensor lambda_value(ParamBinder& p, const Encoding& enc) const;

  /// Probabilities over physical nodes for a state, without gradients.
  std::vector<double> action_probs(const EnvState& state);

  /// Writes `<prefix>.ckpt` and `<prefix>.json`.
  void save(const std::string& prefix) const;
  /// Throws CheckpointError when the sidecar and checkpoint disagree.
  static ConalPolicy load(const std::string& prefix);

 private:
  void init_params();
  ad::Tensor mlp(ParamBinder& p, const std::string& name, const ad::Tensor& x) const;
  ad::Tensor act(const ad::Tensor& x) const;
  ad::Tensor gat(ParamBinder& p, const std::string& name, const ad::Tensor& h,
                 const std::vector<int>& src, const std::vector<int>& dst,
                 const ad::Matrix& link_features) const;
  ad::Tensor pooled_head(ParamBinder& p, const std::string& name, const Encoding& enc) const;

  PolicyConfig config_;
  ad::ParameterSet params_;
};

/// Redundancy-reduction loss between two views with matching row counts.
/// Columns are standardised first; columns with zero variance in either view
/// are dropped with a warning.
ad::Tensor barlow_twins_loss(const ad::Tensor& za, const ad::Tensor& zb, double w = 5e-3);

}  // namespace vnelab
