#include "vnelab/net_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vnelab/errors.hpp"

namespace vnelab {

double quantize_resource(double value) {
  return std::round(value / kResourceQuantum) * kResourceQuantum;
}

// ---------------------------------------------------------------- Topology

Topology::Topology(int num_nodes) : adj_(static_cast<std::size_t>(num_nodes)) {}

int Topology::add_node() {
  adj_.emplace_back();
  return num_nodes() - 1;
}

int Topology::add_link(int u, int v) {
  if (u < 0 || v < 0 || u >= num_nodes() || v >= num_nodes())
    throw InvariantViolation("link (" + std::to_string(u) + "," + std::to_string(v) +
                             ") references an unknown node");
  if (u == v) throw InvariantViolation("self-loop on node " + std::to_string(u));
  if (link_between(u, v))
    throw InvariantViolation("duplicate link (" + std::to_string(u) + "," +
                             std::to_string(v) + ")");
  const int id = num_links();
  links_.push_back({u, v});
  adj_[u].push_back({v, id});
  adj_[v].push_back({u, id});
  return id;
}

std::optional<int> Topology::link_between(int u, int v) const {
  if (u < 0 || u >= num_nodes()) return std::nullopt;
  for (const auto& a : adj_[u])
    if (a.node == v) return a.link;
  return std::nullopt;
}

std::vector<std::vector<int>> Topology::components() const {
  std::vector<int> comp(adj_.size(), -1);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < num_nodes(); ++s) {
    if (comp[s] >= 0) continue;
    const int c = static_cast<int>(out.size());
    out.emplace_back();
    std::vector<int> stack{s};
    comp[s] = c;
    while (!stack.empty()) {
      const int x = stack.back();
      stack.pop_back();
      out[c].push_back(x);
      for (const auto& a : adj_[x]) {
        if (comp[a.node] < 0) {
          comp[a.node] = c;
          stack.push_back(a.node);
        }
      }
    }
    std::sort(out[c].begin(), out[c].end());
  }
  return out;
}

bool Topology::is_connected() const { return components().size() <= 1; }

void Topology::rebuild_index() {
  for (auto& a : adj_) a.clear();
  for (int id = 0; id < num_links(); ++id) {
    adj_[links_[id].u].push_back({links_[id].v, id});
    adj_[links_[id].v].push_back({links_[id].u, id});
  }
}

// --------------------------------------------------------- PhysicalNetwork

int PhysicalNetwork::add_node(double compute_capacity) {
  node_capacity_.push_back(compute_capacity);
  node_available_.push_back(compute_capacity);
  return topo_.add_node();
}

int PhysicalNetwork::add_link(int u, int v, double bandwidth_capacity) {
  const int id = topo_.add_link(u, v);
  link_capacity_.push_back(bandwidth_capacity);
  link_available_.push_back(bandwidth_capacity);
  return id;
}

void PhysicalNetwork::set_label(int n, std::string label) {
  if (n < 0 || n >= num_nodes()) throw InvariantViolation("label for unknown node");
  if (labels_.size() < static_cast<std::size_t>(num_nodes())) labels_.resize(num_nodes());
  labels_[n] = std::move(label);
}

std::string_view PhysicalNetwork::label(int n) const {
  if (static_cast<std::size_t>(n) < labels_.size()) return labels_[n];
  return {};
}

void PhysicalNetwork::validate() const {
  if (num_nodes() == 0) throw InvariantViolation("physical network has no nodes");
  for (int n = 0; n < num_nodes(); ++n) {
    if (!(node_available_[n] >= 0.0 && node_available_[n] <= node_capacity_[n]))
      throw InvariantViolation("node " + std::to_string(n) +
                               ": availability outside [0, capacity]");
  }
  for (int l = 0; l < num_links(); ++l) {
    if (!(link_available_[l] >= 0.0 && link_available_[l] <= link_capacity_[l]))
      throw InvariantViolation("link " + std::to_string(l) +
                               ": availability outside [0, capacity]");
  }
  Topology rebuilt = topo_;
  rebuilt.rebuild_index();
  if (!(rebuilt == topo_)) throw InvariantViolation("adjacency index out of sync");
}

// ---------------------------------------------------------- VirtualNetwork

int VirtualNetwork::add_node(double compute_demand) {
  node_demand_.push_back(compute_demand);
  return topo_.add_node();
}

int VirtualNetwork::add_link(int u, int v, double bandwidth_demand) {
  const int id = topo_.add_link(u, v);
  link_demand_.push_back(bandwidth_demand);
  return id;
}

void VirtualNetwork::validate() const {
  for (int n = 0; n < num_nodes(); ++n)
    if (!(node_demand_[n] >= 0.0))
      throw InvariantViolation("virtual node " + std::to_string(n) + ": negative demand");
  for (int l = 0; l < num_links(); ++l)
    if (!(link_demand_[l] >= 0.0))
      throw InvariantViolation("virtual link " + std::to_string(l) + ": negative demand");
  if (!(lifetime > 0.0)) throw InvariantViolation("lifetime must be positive");
}

// ---------------------------------------------------------------- Solution

Solution Solution::empty_for(const VirtualNetwork& vn) {
  Solution s;
  s.node_map.assign(vn.num_nodes(), -1);
  s.link_map.assign(vn.num_links(), {});
  return s;
}

bool Solution::complete() const {
  return std::all_of(node_map.begin(), node_map.end(), [](int p) { return p >= 0; }) &&
         std::all_of(link_map.begin(), link_map.end(),
                     [](const Path& p) { return !p.empty(); });
}

// ------------------------------------------------------------------ ledger

ResourceUsage resource_usage(const PhysicalNetwork& pn, const VirtualNetwork& vn,
                             const Solution& sol) {
  ResourceUsage u{std::vector<double>(pn.num_nodes(), 0.0),
                  std::vector<double>(pn.num_links(), 0.0)};
  for (int v = 0; v < static_cast<int>(sol.node_map.size()); ++v) {
    const int p = sol.node_map[v];
    if (p < 0) continue;
    if (p >= pn.num_nodes())
      throw MalformedSolution("virtual node " + std::to_string(v) +
                              " mapped to unknown physical node");
    u.node[p] += vn.node_demand(v);
  }
  for (int l = 0; l < static_cast<int>(sol.link_map.size()); ++l) {
    const Path& path = sol.link_map[l];
    for (std::size_t i = 1; i < path.size(); ++i) {
      const auto pl = pn.topology().link_between(path[i - 1], path[i]);
      if (!pl)
        throw MalformedSolution("virtual link " + std::to_string(l) +
                                " crosses a non-existent physical link");
      u.link[*pl] += vn.link_demand(l);
    }
  }
  return u;
}

void allocate(PhysicalNetwork& pn, const VirtualNetwork& vn, const Solution& sol) {
  const ResourceUsage u = resource_usage(pn, vn, sol);
  for (int n = 0; n < pn.num_nodes(); ++n)
    if (u.node[n] > pn.node_available(n))
      throw InsufficientResources("physical node " + std::to_string(n) + ": demand " +
                                  format_double(u.node[n]) + " exceeds available " +
                                  format_double(pn.node_available(n)));
  for (int l = 0; l < pn.num_links(); ++l)
    if (u.link[l] > pn.link_available(l))
      throw InsufficientResources("physical link " + std::to_string(l) + ": demand " +
                                  format_double(u.link[l]) + " exceeds available " +
                                  format_double(pn.link_available(l)));
  for (int n = 0; n < pn.num_nodes(); ++n)
    if (u.node[n] != 0.0) pn.set_node_available(n, pn.node_available(n) - u.node[n]);
  for (int l = 0; l < pn.num_links(); ++l)
    if (u.link[l] != 0.0) pn.set_link_available(l, pn.link_available(l) - u.link[l]);
}

void release(PhysicalNetwork& pn, const VirtualNetwork& vn, const Solution& sol) {
  const ResourceUsage u = resource_usage(pn, vn, sol);
  for (int n = 0; n < pn.num_nodes(); ++n)
    if (u.node[n] != 0.0 && pn.node_available(n) + u.node[n] > pn.node_capacity(n))
      throw OverRelease("physical node " + std::to_string(n) +
                        ": release would exceed capacity");
  for (int l = 0; l < pn.num_links(); ++l)
    if (u.link[l] != 0.0 && pn.link_available(l) + u.link[l] > pn.link_capacity(l))
      throw OverRelease("physical link " + std::to_string(l) +
                        ": release would exceed capacity");
  for (int n = 0; n < pn.num_nodes(); ++n)
    if (u.node[n] != 0.0) pn.set_node_available(n, pn.node_available(n) + u.node[n]);
  for (int l = 0; l < pn.num_links(); ++l)
    if (u.link[l] != 0.0) pn.set_link_available(l, pn.link_available(l) + u.link[l]);
}

PhysicalNetwork apply_solution(PhysicalNetwork pn, const VirtualNetwork& vn,
                               const Solution& sol) {
  allocate(pn, vn, sol);
  return pn;
}

PhysicalNetwork release_solution(PhysicalNetwork pn, const VirtualNetwork& vn,
                                 const Solution& sol) {
  release(pn, vn, sol);
  return pn;
}

// --------------------------------------------------------------- edge list

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

std::string to_edge_list(const PhysicalNetwork& pn) {
  std::string out = "nodes=" + std::to_string(pn.num_nodes()) + "\n";
  for (int l = 0; l < pn.num_links(); ++l) {
    const auto& e = pn.topology().link(l);
    out += std::to_string(e.u) + "," + std::to_string(e.v) + "," +
           format_double(pn.link_capacity(l)) + "\n";
  }
  out += "compute\n";
  for (int n = 0; n < pn.num_nodes(); ++n)
    out += std::to_string(n) + "," + format_double(pn.node_capacity(n)) + "\n";
  return out;
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

long parse_int(std::string_view s, std::size_t line) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ParseError(line, "expected integer, got '" + std::string(s) + "'");
  return v;
}

double parse_real(std::string_view s, std::size_t line) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ParseError(line, "expected number, got '" + std::string(s) + "'");
  return v;
}

}  // namespace

PhysicalNetwork parse_edge_list(std::string_view text) {
  std::vector<std::string_view> lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines)
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);

  if (lines.empty() || !lines[0].starts_with("nodes="))
    throw ParseError(1, "missing 'nodes=<n>' header");
  const long n = parse_int(lines[0].substr(6), 1);
  if (n <= 0) throw ParseError(1, "node count must be positive");

  struct RawLink {
    long u, v;
    double bw;
    std::size_t line;
  };
  std::vector<RawLink> raw_links;
  std::size_t i = 1;
  for (; i < lines.size() && lines[i] != "compute"; ++i) {
    const auto f = split(lines[i], ',');
    if (f.size() != 3) throw ParseError(i + 1, "expected 'src,dst,bandwidth'");
    raw_links.push_back({parse_int(f[0], i + 1), parse_int(f[1], i + 1),
                         parse_real(f[2], i + 1), i + 1});
  }
  if (i == lines.size()) throw ParseError(i + 1, "missing 'compute' section");
  ++i;
  if (i == lines.size()) throw ParseError(i + 1, "empty compute section");

  std::vector<double> compute(static_cast<std::size_t>(n), -1.0);
  for (; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    if (f.size() != 2) throw ParseError(i + 1, "expected 'id,compute'");
    const long id = parse_int(f[0], i + 1);
    if (id < 0 || id >= n) throw ParseError(i + 1, "node id out of range");
    if (compute[id] >= 0.0) throw ParseError(i + 1, "duplicate compute entry");
    const double c = parse_real(f[1], i + 1);
    if (c < 0.0) throw InvariantViolation("node " + std::to_string(id) + ": negative capacity");
    compute[id] = c;
  }
  for (long id = 0; id < n; ++id)
    if (compute[id] < 0.0) throw ParseError(lines.size() + 1, "node " + std::to_string(id) +
                                                                  " has no compute entry");

  PhysicalNetwork pn;
  for (double c : compute) pn.add_node(c);
  for (const auto& r : raw_links) {
    if (r.bw < 0.0)
      throw InvariantViolation("line " + std::to_string(r.line) + ": negative bandwidth");
    pn.add_link(static_cast<int>(r.u), static_cast<int>(r.v), r.bw);
  }
  pn.validate();
  return pn;
}

}  // namespace vnelab
