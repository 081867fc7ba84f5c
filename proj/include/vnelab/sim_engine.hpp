#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "vnelab/net_model.hpp"
#include "vnelab/random.hpp"
#include "vnelab/solver.hpp"

namespace vnelab {

struct SimulationConfig {
  // Physical network
  int pn_nodes = 100;
  double waxman_alpha = 0.5;
  double waxman_beta = 0.2;
  double pn_compute_min = 50.0;
  double pn_compute_max = 100.0;
  double pn_bandwidth_min = 50.0;
  double pn_bandwidth_max = 100.0;
  std::string topology_file;  // edge list; replaces the generated PN when set
  std::uint64_t topology_seed = 0;

  // Request stream
  int num_requests = 1000;
  int vn_size_min = 2;
  int vn_size_max = 10;
  double vn_compute_min = 0.0;
  double vn_compute_max = 20.0;
  double vn_bandwidth_min = 0.0;
  double vn_bandwidth_max = 50.0;
  double vn_link_prob = 0.5;
  double mean_lifetime = 500.0;
  double arrival_rate = 0.14;
  std::uint64_t seed = 0;

  // Demand inflation of a random fraction of requests
  double inflate_fraction = 0.0;
  double inflate_factor = 1.0;

  /// Throws ConfigError naming the first offending key.
  void validate() const;
  /// Assigns one key from its text form. Returns false for unknown keys and
  /// throws ConfigError on unparsable values.
  bool set(std::string_view key, std::string_view value);
};

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Flat `key = value` text: blank lines, `#` comments and `[section]` headers
/// are skipped, and double-quoted values are unquoted. Throws ParseError.
std::vector<KeyValue> parse_key_values(std::string_view text);
std::string read_text_file(const std::string& path);

/// Applies every pair, throwing ConfigError on unknown keys.
SimulationConfig parse_simulation_config(std::string_view text);

/// Waxman graph on points uniform in the unit square: each pair is linked
/// with probability beta * exp(-d / (alpha * L)), L the largest pairwise
/// distance. Components are bridged by their geometrically closest pairs.
PhysicalNetwork gen_waxman(int n, double alpha, double beta, Rng& rng,
                           double compute_min = 50.0, double compute_max = 100.0,
                           double bandwidth_min = 50.0, double bandwidth_max = 100.0);

/// Bisects beta so the mean link count over `samples` seeds hits the target.
double calibrate_waxman_beta(int n, double alpha, double target_links, int samples = 20,
                             std::uint64_t seed = 0);

/// Builds the physical network a configuration describes.
PhysicalNetwork make_physical_network(const SimulationConfig& config);

VirtualNetwork gen_vn_request(const SimulationConfig& config, double arrival_time, Rng& rng);

/// The arrival-ordered request stream of a configuration, ids 0..n-1.
std::vector<VirtualNetwork> generate_requests(const SimulationConfig& config);

PhysicalNetwork import_topology(const std::string& path);

struct InstanceOutcome {
  int vn_id = 0;
  double arrival = 0.0;
  double lifetime = 0.0;
  bool accepted = false;
  double revenue = 0.0;
  double consumption = 0.0;
  double solve_seconds = 0.0;
  double violation = 0.0;
  std::string failure;  // message of a solver or embedding error, if any
};

enum class EventKind { Arrival, Departure };

struct SimEvent {
  EventKind kind = EventKind::Arrival;
  double time = 0.0;
  int vn_id = 0;
  bool accepted = false;
  double revenue = 0.0;
  double consumption = 0.0;
  double lifetime = 0.0;
  double violation = 0.0;
};

struct SimulationRecord {
  std::vector<InstanceOutcome> outcomes;
  std::vector<SimEvent> events;
  int total = 0;
  int accepted = 0;
  int failures = 0;
  PhysicalNetwork final_pn;
};

/// One embedding currently holding resources.
struct ActiveEmbedding {
  VirtualNetwork vn;
  Solution solution;
  double departure = 0.0;
};

struct SimulationHooks {
  /// Called with each instance just before it is handed to the solver.
  std::function<void(const VNEInstance&)> on_instance;
  /// Called after every processed event.
  std::function<void(const SimEvent&, const PhysicalNetwork&,
                     const std::vector<const ActiveEmbedding*>&)>
      on_event;
};

SimulationRecord run_simulation(Solver& solver, const SimulationConfig& config,
                                const SimulationHooks& hooks = {});
SimulationRecord run_simulation(Solver& solver, const SimulationConfig& config,
                                const PhysicalNetwork& pn, const SimulationHooks& hooks = {});

void write_event_log(std::ostream& out, const SimulationRecord& record);

}  // namespace vnelab
