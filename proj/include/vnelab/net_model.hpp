#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vnelab {

using Path = std::vector<int>;  // ordered physical node ids

/// Generated resources are snapped to a 2^-20 grid. Sums and differences of
/// grid values stay exact in 64-bit floats, so allocation followed by release
/// restores availabilities bit for bit.
inline constexpr double kResourceQuantum = 1.0 / 1048576.0;
double quantize_resource(double value);

struct LinkEnds {
  int u = 0;
  int v = 0;
  int other(int node) const { return node == u ? v : u; }
  bool operator==(const LinkEnds&) const = default;
};

struct Adjacent {
  int node = 0;
  int link = 0;
  bool operator==(const Adjacent&) const = default;
};

/// Undirected simple graph over dense ids 0..n-1.
class Topology {
 public:
  Topology() = default;
  explicit Topology(int num_nodes);

  int add_node();
  /// Throws InvariantViolation on self-loops, duplicates or unknown ids.
  int add_link(int u, int v);

  int num_nodes() const { return static_cast<int>(adj_.size()); }
  int num_links() const { return static_cast<int>(links_.size()); }
  const LinkEnds& link(int id) const { return links_.at(id); }
  const std::vector<LinkEnds>& links() const { return links_; }
  std::span<const Adjacent> neighbors(int node) const { return adj_.at(node); }
  int degree(int node) const { return static_cast<int>(adj_.at(node).size()); }
  std::optional<int> link_between(int u, int v) const;
  bool is_connected() const;
  /// Connected components as sorted node lists, ordered by smallest member.
  std::vector<std::vector<int>> components() const;

  /// Rebuilds the adjacency index from the link list.
  void rebuild_index();

  bool operator==(const Topology&) const = default;

 private:
  std::vector<LinkEnds> links_;
  std::vector<std::vector<Adjacent>> adj_;
};

class PhysicalNetwork {
 public:
  PhysicalNetwork() = default;

  int add_node(double compute_capacity);
  int add_link(int u, int v, double bandwidth_capacity);

  const Topology& topology() const { return topo_; }
  int num_nodes() const { return topo_.num_nodes(); }
  int num_links() const { return topo_.num_links(); }

  double node_capacity(int n) const { return node_capacity_.at(n); }
  double node_available(int n) const { return node_available_.at(n); }
  double link_capacity(int l) const { return link_capacity_.at(l); }
  double link_available(int l) const { return link_available_.at(l); }
  void set_node_available(int n, double value) { node_available_.at(n) = value; }
  void set_link_available(int l, double value) { link_available_.at(l) = value; }
  const std::vector<double>& node_available() const { return node_available_; }
  const std::vector<double>& link_available() const { return link_available_; }
  const std::vector<double>& node_capacity() const { return node_capacity_; }
  const std::vector<double>& link_capacity() const { return link_capacity_; }

  void set_label(int n, std::string label);
  std::string_view label(int n) const;

  /// Throws InvariantViolation naming the first failed check.
  void validate() const;

  bool operator==(const PhysicalNetwork&) const = default;

 private:
  Topology topo_;
  std::vector<double> node_capacity_, node_available_;
  std::vector<double> link_capacity_, link_available_;
  std::vector<std::string> labels_;
};

class VirtualNetwork {
 public:
  VirtualNetwork() = default;

  int add_node(double compute_demand);
  int add_link(int u, int v, double bandwidth_demand);

  const Topology& topology() const { return topo_; }
  int num_nodes() const { return topo_.num_nodes(); }
  int num_links() const { return topo_.num_links(); }
  double node_demand(int n) const { return node_demand_.at(n); }
  double link_demand(int l) const { return link_demand_.at(l); }
  void set_node_demand(int n, double d) { node_demand_.at(n) = d; }
  void set_link_demand(int l, double d) { link_demand_.at(l) = d; }

  int id = 0;
  double arrival = 0.0;   // time units
  double lifetime = 1.0;  // time units

  void validate() const;

  bool operator==(const VirtualNetwork&) const = default;

 private:
  Topology topo_;
  std::vector<double> node_demand_;
  std::vector<double> link_demand_;
};

/// A VN together with the physical network as it stood when the VN arrived.
struct VNEInstance {
  VirtualNetwork vn;
  PhysicalNetwork pn;
};

struct StepViolation {
  double h_node = 0.0;
  double h_link = 0.0;
};

struct Solution {
  std::vector<int> node_map;   // virtual node -> physical node, -1 if unplaced
  std::vector<Path> link_map;  // virtual link -> physical path, empty if unrouted
  bool feasible = false;
  std::vector<StepViolation> violations;
  double revenue = 0.0;
  double consumption = 0.0;
  double r2c = 0.0;

  static Solution empty_for(const VirtualNetwork& vn);
  bool complete() const;
};

/// Per-element totals a solution places on the physical network.
struct ResourceUsage {
  std::vector<double> node;  // indexed by physical node
  std::vector<double> link;  // indexed by physical link
};

/// Sums demands onto physical elements; a physical link is charged once for
/// every virtual link whose path crosses it. Throws MalformedSolution when a
/// path uses a non-existent physical link.
ResourceUsage resource_usage(const PhysicalNetwork& pn, const VirtualNetwork& vn,
                             const Solution& sol);

void allocate(PhysicalNetwork& pn, const VirtualNetwork& vn, const Solution& sol);
void release(PhysicalNetwork& pn, const VirtualNetwork& vn, const Solution& sol);

PhysicalNetwork apply_solution(PhysicalNetwork pn, const VirtualNetwork& vn,
                               const Solution& sol);
PhysicalNetwork release_solution(PhysicalNetwork pn, const VirtualNetwork& vn,
                                 const Solution& sol);

// Edge-list text format:
//   nodes=<n>
//   <src>,<dst>,<bandwidth>     one line per link
//   compute
//   <id>,<compute>              one line per node
// Values are written in shortest round-trip form.
std::string to_edge_list(const PhysicalNetwork& pn);
PhysicalNetwork parse_edge_list(std::string_view text);

std::string format_double(double value);

}  // namespace vnelab
