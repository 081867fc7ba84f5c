#include "vnelab/sim_engine.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <sstream>

#include "json.hpp"

#include "vnelab/constraint_core.hpp"
#include "vnelab/errors.hpp"

namespace vnelab {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(std::string(key), "cannot parse '" + std::string(value) + "'");
  return out;
}

}  // namespace

bool SimulationConfig::set(std::string_view key, std::string_view value) {
  auto dbl = [&](double& field) { field = parse_number<double>(key, value); };
  auto integer = [&](int& field) { field = parse_number<int>(key, value); };
  auto u64 = [&](std::uint64_t& field) { field = parse_number<std::uint64_t>(key, value); };

  if (key == "pn_nodes") integer(pn_nodes);
  else if (key == "waxman_alpha") dbl(waxman_alpha);
  else if (key == "waxman_beta") dbl(waxman_beta);
  else if (key == "pn_compute_min") dbl(pn_compute_min);
  else if (key == "pn_compute_max") dbl(pn_compute_max);
  else if (key == "pn_bandwidth_min") dbl(pn_bandwidth_min);
  else if (key == "pn_bandwidth_max") dbl(pn_bandwidth_max);
  else if (key == "topology_file") topology_file = std::string(value);
  else if (key == "topology_seed") u64(topology_seed);
  else if (key == "num_requests") integer(num_requests);
  else if (key == "vn_size_min") integer(vn_size_min);
  else if (key == "vn_size_max") integer(vn_size_max);
  else if (key == "vn_compute_min") dbl(vn_compute_min);
  else if (key == "vn_compute_max") dbl(vn_compute_max);
  else if (key == "vn_bandwidth_min") dbl(vn_bandwidth_min);
  else if (key == "vn_bandwidth_max") dbl(vn_bandwidth_max);
  else if (key == "vn_link_prob") dbl(vn_link_prob);
  else if (key == "mean_lifetime") dbl(mean_lifetime);
  else if (key == "arrival_rate" || key == "eta") dbl(arrival_rate);
  else if (key == "seed") u64(seed);
  else if (key == "inflate_fraction") dbl(inflate_fraction);
  else if (key == "inflate_factor") dbl(inflate_factor);
  else return false;
  return true;
}

void SimulationConfig::validate() const {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(pn_nodes >= 2, "pn_nodes", "need at least 2 nodes");
  require(waxman_alpha > 0 && waxman_alpha <= 1, "waxman_alpha", "must lie in (0, 1]");
  require(waxman_beta > 0 && waxman_beta <= 1, "waxman_beta", "must lie in (0, 1]");
  require(pn_compute_min >= 0 && pn_compute_min <= pn_compute_max, "pn_compute_min",
          "empty or negative range");
  require(pn_bandwidth_min >= 0 && pn_bandwidth_min <= pn_bandwidth_max, "pn_bandwidth_min",
          "empty or negative range");
  require(num_requests >= 0, "num_requests", "must be nonnegative");
  require(vn_size_min >= 1 && vn_size_min <= vn_size_max, "vn_size_min", "empty range");
  require(vn_compute_min >= 0 && vn_compute_min <= vn_compute_max, "vn_compute_min",
          "empty or negative range");
  require(vn_bandwidth_min >= 0 && vn_bandwidth_min <= vn_bandwidth_max, "vn_bandwidth_min",
          "empty or negative range");
  require(vn_link_prob >= 0 && vn_link_prob <= 1, "vn_link_prob", "must lie in [0, 1]");
  require(mean_lifetime > 0, "mean_lifetime", "must be positive");
  require(arrival_rate > 0, "arrival_rate", "must be positive");
  require(inflate_fraction >= 0 && inflate_fraction <= 1, "inflate_fraction",
          "must lie in [0, 1]");
  require(inflate_factor >= 0, "inflate_factor", "must be nonnegative");
}

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
    const auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(line_no, "empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    out.push_back({std::string(key), std::string(value), line_no});
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SimulationConfig parse_simulation_config(std::string_view text) {
  SimulationConfig cfg;
  for (const auto& kv : parse_key_values(text))
    if (!cfg.set(kv.key, kv.value)) throw ConfigError(kv.key, "unknown key");
  cfg.validate();
  return cfg;
}

PhysicalNetwork gen_waxman(int n, double alpha, double beta, Rng& rng, double compute_min,
                           double compute_max, double bandwidth_min, double bandwidth_max) {
  if (n < 2) throw InvariantViolation("Waxman graph needs at least 2 nodes");
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.uniform();
    y[i] = rng.uniform();
  }
  auto dist = [&](int a, int b) { return std::hypot(x[a] - x[b], y[a] - y[b]); };
  double span = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) span = std::max(span, dist(i, j));
  if (span <= 0.0) span = 1.0;

  Topology topo(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.uniform() < beta * std::exp(-dist(i, j) / (alpha * span))) topo.add_link(i, j);

  const auto comps = topo.components();
  if (comps.size() > 1) {
    std::vector<int> merged = comps.front();
    for (std::size_t c = 1; c < comps.size(); ++c) {
      int best_a = -1, best_b = -1;
      double best = 0.0;
      for (int a : merged)
        for (int b : comps[c])
          if (best_a < 0 || dist(a, b) < best) {
            best = dist(a, b);
            best_a = a;
            best_b = b;
          }
      topo.add_link(best_a, best_b);
      merged.insert(merged.end(), comps[c].begin(), comps[c].end());
    }
  }

  PhysicalNetwork pn;
  for (int i = 0; i < n; ++i) pn.add_node(quantize_resource(rng.uniform(compute_min, compute_max)));
  for (const auto& l : topo.links())
    pn.add_link(l.u, l.v, quantize_resource(rng.uniform(bandwidth_min, bandwidth_max)));
  return pn;
}

double calibrate_waxman_beta(int n, double alpha, double target_links, int samples,
                             std::uint64_t seed) {
  auto mean_links = [&](double beta) {
    double total = 0.0;
    for (int s = 0; s < samples; ++s) {
      Rng rng(seed + static_cast<std::uint64_t>(s));
      total += gen_waxman(n, alpha, beta, rng).num_links();
    }
    return total / samples;
  };
  double lo = 1e-6, hi = 1.0;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_links(mid) < target_links ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

PhysicalNetwork make_physical_network(const SimulationConfig& config) {
  if (!config.topology_file.empty()) return import_topology(config.topology_file);
  Rng rng(config.topology_seed);
  return gen_waxman(config.pn_nodes, config.waxman_alpha, config.waxman_beta, rng,
                    config.pn_compute_min, config.pn_compute_max, config.pn_bandwidth_min,
                    config.pn_bandwidth_max);
}

VirtualNetwork gen_vn_request(const SimulationConfig& config, double arrival_time, Rng& rng) {
  const int n = rng.uniform_int(config.vn_size_min, config.vn_size_max);
  Topology topo(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(config.vn_link_prob)) topo.add_link(i, j);
  const auto comps = topo.components();
  if (comps.size() > 1) {
    std::vector<int> merged = comps.front();
    for (std::size_t c = 1; c < comps.size(); ++c) {
      const int a = merged[rng.uniform_int(0, static_cast<int>(merged.size()) - 1)];
      const int b = comps[c][rng.uniform_int(0, static_cast<int>(comps[c].size()) - 1)];
      topo.add_link(a, b);
      merged.insert(merged.end(), comps[c].begin(), comps[c].end());
    }
  }

  VirtualNetwork vn;
  for (int i = 0; i < n; ++i)
    vn.add_node(quantize_resource(rng.uniform(config.vn_compute_min, config.vn_compute_max)));
  for (const auto& l : topo.links())
    vn.add_link(l.u, l.v,
                quantize_resource(rng.uniform(config.vn_bandwidth_min, config.vn_bandwidth_max)));
  vn.arrival = arrival_time;
  vn.lifetime = rng.exponential(config.mean_lifetime);

  if (config.inflate_fraction > 0.0 && rng.bernoulli(config.inflate_fraction)) {
    for (int i = 0; i < vn.num_nodes(); ++i)
      vn.set_node_demand(i, quantize_resource(vn.node_demand(i) * config.inflate_factor));
    for (int l = 0; l < vn.num_links(); ++l)
      vn.set_link_demand(l, quantize_resource(vn.link_demand(l) * config.inflate_factor));
  }
  return vn;
}

std::vector<VirtualNetwork> generate_requests(const SimulationConfig& config) {
  config.validate();
  Rng arrivals(config.seed);
  Rng shapes = arrivals.split();
  std::vector<VirtualNetwork> out;
  out.reserve(config.num_requests);
  double t = 0.0;
  for (int i = 0; i < config.num_requests; ++i) {
    t += arrivals.exponential(1.0 / config.arrival_rate);
    out.push_back(gen_vn_request(config, t, shapes));
    out.back().id = i;
  }
  return out;
}

PhysicalNetwork import_topology(const std::string& path) {
  return parse_edge_list(read_text_file(path));
}

SimulationRecord run_simulation(Solver& solver, const SimulationConfig& config,
                                const SimulationHooks& hooks) {
  return run_simulation(solver, config, make_physical_network(config), hooks);
}

SimulationRecord run_simulation(Solver& solver, const SimulationConfig& config,
                                const PhysicalNetwork& initial_pn, const SimulationHooks& hooks) {
  const auto requests = generate_requests(config);
  SimulationRecord rec;
  PhysicalNetwork pn = initial_pn;
  std::map<int, ActiveEmbedding> active;

  using Pending = std::pair<double, int>;  // departure time, vn id
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> departures;

  auto notify = [&](const SimEvent& ev) {
    rec.events.push_back(ev);
    if (!hooks.on_event) return;
    std::vector<const ActiveEmbedding*> live;
    live.reserve(active.size());
    for (const auto& [id, emb] : active) live.push_back(&emb);
    hooks.on_event(ev, pn, live);
  };

  auto depart_until = [&](double t) {
    while (!departures.empty() && departures.top().first <= t) {
      const auto [time, id] = departures.top();
      departures.pop();
      auto it = active.find(id);
      release(pn, it->second.vn, it->second.solution);
      active.erase(it);
      SimEvent ev;
      ev.kind = EventKind::Departure;
      ev.time = time;
      ev.vn_id = id;
      notify(ev);
    }
  };

  for (const auto& vn : requests) {
    depart_until(vn.arrival);
    InstanceOutcome out;
    out.vn_id = vn.id;
    out.arrival = vn.arrival;
    out.lifetime = vn.lifetime;

    VNEInstance inst{vn, pn};
    if (hooks.on_instance) hooks.on_instance(inst);
    try {
      const auto start = std::chrono::steady_clock::now();
      SolveResult res = solver.solve(inst);
      out.solve_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out.violation = res.violation;
      if (res.solution.feasible) {
        const ConstraintReport report = check_solution(inst, res.solution);
        if (!report.feasible())
          throw InvariantViolation("solver returned an infeasible embedding: " +
                                   report.summary());
        allocate(pn, vn, res.solution);
        out.accepted = true;
        out.revenue = revenue(vn);
        out.consumption = consumption(res.solution, vn);
        active.emplace(vn.id, ActiveEmbedding{vn, std::move(res.solution), vn.arrival + vn.lifetime});
        departures.emplace(vn.arrival + vn.lifetime, vn.id);
      }
    } catch (const std::exception& e) {
      out.accepted = false;
      out.revenue = 0.0;
      out.consumption = 0.0;
      out.failure = e.what();
      ++rec.failures;
    }

    ++rec.total;
    if (out.accepted) ++rec.accepted;
    SimEvent ev;
    ev.kind = EventKind::Arrival;
    ev.time = vn.arrival;
    ev.vn_id = vn.id;
    ev.accepted = out.accepted;
    ev.revenue = out.revenue;
    ev.consumption = out.consumption;
    ev.lifetime = out.lifetime;
    ev.violation = out.violation;
    rec.outcomes.push_back(std::move(out));
    notify(ev);
  }
  depart_until(std::numeric_limits<double>::infinity());
  rec.final_pn = std::move(pn);
  return rec;
}

void write_event_log(std::ostream& out, const SimulationRecord& record) {
  for (const auto& ev : record.events) {
    nlohmann::json j;
    j["type"] = ev.kind == EventKind::Arrival ? "arrival" : "departure";
    j["time"] = ev.time;
    j["vn"] = ev.vn_id;
    if (ev.kind == EventKind::Arrival) {
      j["accepted"] = ev.accepted;
      j["revenue"] = ev.revenue;
      j["consumption"] = ev.consumption;
      j["lifetime"] = ev.lifetime;
      j["violation"] = ev.violation;
    }
    out << j.dump() << '\n';
  }
}

}  // namespace vnelab
