#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vnelab/random.hpp"

namespace vnelab::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Named trainable matrices with their gradients and optimizer moments.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m;  // first moment
    Matrix v;  // second moment
    bool has_grad = false;
  };

  /// Glorot-uniform initialised parameter. Throws InvariantViolation on a
  /// duplicate name.
  Matrix& add(const std::string& name, int rows, int cols, Rng& rng);
  Matrix& add_zeros(const std::string& name, int rows, int cols);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Matrix& value(const std::string& name) { return entry(name).value; }
  const Matrix& value(const std::string& name) const { return entry(name).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t num_scalars() const;

  void zero_grad();
  /// Copies values from a set with identical names and shapes.
  void copy_values_from(const ParameterSet& other);
  bool values_equal(const ParameterSet& other) const;

  /// Binary layout: u32 version, u32 count, then per parameter u32 name
  /// length, name bytes, u32 rank, u64 dims, little-endian f64 values in
  /// row-major order.
  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static ParameterSet load(std::istream& in);
  static ParameterSet load(const std::string& path);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Handle to a value recorded on a tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Gradient after backward(); zeros if no gradient reached this node.
  Matrix grad() const;
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  double item() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records operations during a forward pass and replays them backwards.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  Tensor constant(Matrix value);
  Tensor constant(double value);
  /// Leaf whose gradient is kept for inspection.
  Tensor variable(Matrix value);
  /// Leaf bound to a parameter; backward() adds into its gradient.
  Tensor param(ParameterSet& params, const std::string& name);

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to every leaf.
  void backward(const Tensor& out);

  std::size_t size() const { return nodes_.size(); }

  // Op implementation interface.
  Tensor record(Matrix value, std::initializer_list<Tensor> parents, BackFn back);
  Tensor record(Matrix value, const std::vector<Tensor>& parents, BackFn back);
  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix* grad_if_any(int id) const {
    return nodes_[id].grad.size() ? &nodes_[id].grad : nullptr;
  }
  const Matrix& grad_of(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  void accumulate(int id, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackFn back;
    bool param = false;
  };
  std::vector<Node> nodes_;
};

// Arithmetic. The second operand of add/sub/mul/div may broadcast from shape
// 1x1, 1xn or mx1 to the first operand's m x n.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor minimum(const Tensor& a, const Tensor& b);

// Elementwise functions.
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Reductions.
Tensor sum(const Tensor& a);        // 1x1
Tensor mean(const Tensor& a);       // 1x1
Tensor sum_rows(const Tensor& a);   // 1 x cols, summing over rows
Tensor mean_rows(const Tensor& a);  // 1 x cols
Tensor mse(const Tensor& a, const Tensor& target);

// Structure.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
Tensor slice_cols(const Tensor& a, int start, int count);

// Graph primitives over an edge list; `segments[e]` names the group of row e.
Tensor segment_softmax(const Tensor& logits, const std::vector<int>& segments, int num_segments);
Tensor segment_sum(const Tensor& values, const std::vector<int>& segments, int num_segments);

/// Log-probabilities of a column of logits restricted to mask entries.
/// Masked-out entries hold -infinity and receive no gradient. Throws EmptyMask.
Tensor masked_log_softmax(const Tensor& logits, const std::vector<char>& mask);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t nudged = 0;  // entries re-evaluated after a kink was detected
};

using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of fn at `inputs` against central
/// differences. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult grad_check(const ScalarFn& fn, std::vector<Matrix> inputs, double eps = 1e-5);

using ParamFn = std::function<Tensor(Tape&, ParameterSet&)>;

/// Same check over parameter entries. When max_per_param > 0 only that many
/// randomly chosen entries of each parameter are probed; `include` restricts
/// the probed parameters by name.
GradCheckResult grad_check_params(const ParamFn& fn, ParameterSet& params, double eps = 1e-5,
                                  std::size_t max_per_param = 0, std::uint64_t seed = 0,
                                  const std::function<bool(const std::string&)>& include = {});

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  /// Parameters whose name starts with a listed prefix step with lr * scale.
  std::vector<std::pair<std::string, double>> lr_scales;

  /// Throws MissingGradient naming the first parameter without a gradient.
  void step(ParameterSet& params);
};

}  // namespace vnelab::ad
