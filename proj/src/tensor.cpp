#include "vnelab/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "vnelab/errors.hpp"

namespace vnelab::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeMismatch(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

enum class Bcast { Same, Scalar, Row, Col };

Bcast broadcast_kind(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  shape_error(op, a, b);
}

Matrix expand(const Matrix& b, Bcast k, Eigen::Index rows, Eigen::Index cols) {
  switch (k) {
    case Bcast::Same: return b;
    case Bcast::Scalar: return Matrix::Constant(rows, cols, b(0, 0));
    case Bcast::Row: return b.replicate(rows, 1);
    case Bcast::Col: return b.replicate(1, cols);
  }
  return b;
}

Matrix reduce(const Matrix& g, Bcast k) {
  switch (k) {
    case Bcast::Same: return g;
    case Bcast::Scalar: return Matrix::Constant(1, 1, g.sum());
    case Bcast::Row: return g.colwise().sum();
    case Bcast::Col: return g.rowwise().sum();
  }
  return g;
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D df) {
  Tape& tape = *a.tape();
  Matrix out = a.value().unaryExpr(f);
  const int ia = a.id();
  return tape.record(std::move(out), {a}, [ia, df](Tape& t, int self) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(self);
    Matrix g = t.grad_of(self);
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) *= df(x(i), y(i));
    t.accumulate(ia, g);
  });
}

void check_same_tape(const Tensor& a, const Tensor& b) {
  if (a.tape() != b.tape()) throw InvariantViolation("operands recorded on different tapes");
}

}  // namespace

// ---- ParameterSet ---------------------------------------------------------

Matrix& ParameterSet::add(const std::string& name, int rows, int cols, Rng& rng) {
  Matrix& m = add_zeros(name, rows, cols);
  const double limit = std::sqrt(6.0 / (rows + cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

Matrix& ParameterSet::add_zeros(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw InvariantViolation("duplicate parameter name " + name);
  index_[name] = entries_.size();
  Entry e;
  e.name = name;
  e.value = Matrix::Zero(rows, cols);
  e.grad = Matrix::Zero(rows, cols);
  e.m = Matrix::Zero(rows, cols);
  e.v = Matrix::Zero(rows, cols);
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

ParameterSet::Entry& ParameterSet::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvariantViolation("unknown parameter " + name);
  return entries_[it->second];
}

const ParameterSet::Entry& ParameterSet::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvariantViolation("unknown parameter " + name);
  return entries_[it->second];
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) {
    e.grad.setZero();
    e.has_grad = false;
  }
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  for (auto& e : entries_) {
    const Entry& o = other.entry(e.name);
    if (o.value.rows() != e.value.rows() || o.value.cols() != e.value.cols())
      shape_error(e.name.c_str(), e.value, o.value);
    e.value = o.value;
  }
}

bool ParameterSet::values_equal(const ParameterSet& other) const {
  if (other.entries_.size() != entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      return false;
    if (std::memcmp(a.value.data(), b.value.data(), sizeof(double) * a.value.size()) != 0)
      return false;
  }
  return true;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void ParameterSet::save(std::ostream& out) const {
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.cols()));
    for (Eigen::Index i = 0; i < e.value.rows(); ++i)
      for (Eigen::Index j = 0; j < e.value.cols(); ++j)
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(e.value(i, j)));
  }
  if (!out) throw CheckpointError("write failed");
}

void ParameterSet::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path);
  save(out);
}

ParameterSet ParameterSet::load(std::istream& in) {
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(in);
  ParameterSet ps;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get_le<std::uint32_t>(in);
    if (len > (1u << 20)) throw CheckpointError("implausible name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw CheckpointError("truncated checkpoint");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank != 2) throw CheckpointError("parameter " + name + " has unsupported rank");
    const auto rows = get_le<std::uint64_t>(in);
    const auto cols = get_le<std::uint64_t>(in);
    if (rows > (1u << 24) || cols > (1u << 24))
      throw CheckpointError("parameter " + name + " has implausible shape");
    Matrix& m = ps.add_zeros(name, static_cast<int>(rows), static_cast<int>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        m(i, j) = std::bit_cast<double>(get_le<std::uint64_t>(in));
  }
  return ps;
}

ParameterSet ParameterSet::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return load(in);
}

// ---- Tensor / Tape -------------------------------------------------------

const Matrix& Tensor::value() const { return tape_->value(id_); }

Matrix Tensor::grad() const {
  const Matrix* g = tape_->grad_if_any(id_);
  return g ? *g : Matrix::Zero(value().rows(), value().cols());
}

double Tensor::item() const {
  if (value().size() != 1) throw ShapeMismatch("item: " + shape_str(value()) + " vs [1x1]");
  return value()(0, 0);
}

Tensor Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), false, nullptr, false});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Tensor Tape::variable(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), true, nullptr, false});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::param(ParameterSet& params, const std::string& name) {
  ParameterSet::Entry* e = &params.entry(name);
  nodes_.push_back({e->value, Matrix(), true,
                    [e](Tape& t, int self) {
                      if (const Matrix* g = t.grad_if_any(self)) e->grad += *g;
                      e->has_grad = true;
                    },
                    true});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::record(Matrix value, std::initializer_list<Tensor> parents, BackFn back) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || nodes_[p.id()].requires_grad;
  nodes_.push_back({std::move(value), Matrix(), rg, rg ? std::move(back) : nullptr, false});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::record(Matrix value, const std::vector<Tensor>& parents, BackFn back) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || nodes_[p.id()].requires_grad;
  nodes_.push_back({std::move(value), Matrix(), rg, rg ? std::move(back) : nullptr, false});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(const Tensor& out) {
  if (out.tape() != this) throw InvariantViolation("backward on a foreign tensor");
  if (out.value().size() != 1)
    throw ShapeMismatch("backward: " + shape_str(out.value()) + " vs [1x1]");
  accumulate(out.id(), Matrix::Ones(1, 1));
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.back || (n.grad.size() == 0 && !n.param)) continue;
    n.back(*this, id);
  }
}

// ---- Ops ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_tape(a, b);
  const Bcast k = broadcast_kind("add", a.value(), b.value());
  Matrix out = a.value() + expand(b.value(), k, a.value().rows(), a.value().cols());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, k](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, reduce(g, k));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_tape(a, b);
  const Bcast k = broadcast_kind("sub", a.value(), b.value());
  Matrix out = a.value() - expand(b.value(), k, a.value().rows(), a.value().cols());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, k](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, -reduce(g, k));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_tape(a, b);
  const Bcast k = broadcast_kind("mul", a.value(), b.value());
  Matrix bx = expand(b.value(), k, a.value().rows(), a.value().cols());
  Matrix out = a.value().cwiseProduct(bx);
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, k](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& av = t.value(ia);
    if (t.requires_grad(ia))
      t.accumulate(ia, g.cwiseProduct(expand(t.value(ib), k, av.rows(), av.cols())));
    if (t.requires_grad(ib)) t.accumulate(ib, reduce(g.cwiseProduct(av), k));
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_tape(a, b);
  const Bcast k = broadcast_kind("div", a.value(), b.value());
  Matrix bx = expand(b.value(), k, a.value().rows(), a.value().cols());
  Matrix out = a.value().cwiseQuotient(bx);
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, k](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& av = t.value(ia);
    const Matrix bx = expand(t.value(ib), k, av.rows(), av.cols());
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseQuotient(bx));
    if (t.requires_grad(ib))
      t.accumulate(ib, reduce(-g.cwiseProduct(t.value(self)).cwiseQuotient(bx), k));
  });
}

Tensor scale(const Tensor& a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {a}, [ia, s](Tape& t, int self) {
    t.accumulate(ia, t.grad_of(self) * s);
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value().array() + s, {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, t.grad_of(self));
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_tape(a, b);
  if (a.value().cols() != b.value().rows()) shape_error("matmul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Tensor transpose(const Tensor& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, t.grad_of(self).transpose());
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  check_same_tape(a, b);
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
    shape_error("minimum", a.value(), b.value());
  Matrix out = a.value().cwiseMin(b.value());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    Matrix ga = Matrix::Zero(g.rows(), g.cols()), gb = ga;
    for (Eigen::Index i = 0; i < g.size(); ++i) (av(i) <= bv(i) ? ga(i) : gb(i)) = g(i);
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return x > lo && x < hi ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  const int ia = a.id();
  const auto r = a.value().rows(), c = a.value().cols();
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {a},
                          [ia, r, c](Tape& t, int self) {
                            t.accumulate(ia, Matrix::Constant(r, c, t.grad_of(self)(0, 0)));
                          });
}

Tensor mean(const Tensor& a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeMismatch("mean of an empty tensor " + shape_str(a.value()));
  return scale(sum(a), 1.0 / n);
}

Tensor sum_rows(const Tensor& a) {
  const int ia = a.id();
  const auto r = a.value().rows();
  return a.tape()->record(a.value().colwise().sum(), {a}, [ia, r](Tape& t, int self) {
    t.accumulate(ia, t.grad_of(self).replicate(r, 1));
  });
}

Tensor mean_rows(const Tensor& a) {
  if (a.value().rows() == 0) throw ShapeMismatch("mean_rows of " + shape_str(a.value()));
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.value().rows()));
}

Tensor mse(const Tensor& a, const Tensor& target) {
  if (a.value().rows() != target.value().rows() || a.value().cols() != target.value().cols())
    shape_error("mse", a.value(), target.value());
  return mean(square(sub(a, target)));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
  const auto cols = parts.front().value().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.value().rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.value().rows()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.value().rows();
  }
  return parts.front().tape()->record(std::move(out), parts, [spans](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    for (const auto& [id, start] : spans)
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(start, t.value(id).rows()));
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
  const auto rows = parts.front().value().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.value().cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.value().cols()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.value().cols();
  }
  return parts.front().tape()->record(std::move(out), parts, [spans](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    for (const auto& [id, start] : spans)
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(start, t.value(id).cols()));
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
  const Matrix& v = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows())
      throw ShapeMismatch("gather_rows: index " + std::to_string(rows[i]) + " vs " +
                          shape_str(v));
    out.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, rows](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& av = t.value(ia);
    Matrix ga = Matrix::Zero(av.rows(), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ia, ga);
  });
}

Tensor slice_cols(const Tensor& a, int start, int count) {
  const Matrix& v = a.value();
  if (start < 0 || count < 0 || start + count > v.cols())
    throw ShapeMismatch("slice_cols: [" + std::to_string(start) + "+" + std::to_string(count) +
                        "] vs " + shape_str(v));
  const int ia = a.id();
  return a.tape()->record(v.middleCols(start, count), {a}, [ia, start, count](Tape& t, int self) {
    const Matrix& av = t.value(ia);
    Matrix ga = Matrix::Zero(av.rows(), av.cols());
    ga.middleCols(start, count) = t.grad_of(self);
    t.accumulate(ia, ga);
  });
}

Tensor segment_softmax(const Tensor& logits, const std::vector<int>& segments, int num_segments) {
  const Matrix& x = logits.value();
  if (x.cols() != 1 || x.rows() != static_cast<Eigen::Index>(segments.size()))
    throw ShapeMismatch("segment_softmax: " + shape_str(x) + " vs [" +
                        std::to_string(segments.size()) + "x1]");
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < segments.size(); ++e) {
    const int s = segments[e];
    if (s < 0 || s >= num_segments) throw ShapeMismatch("segment id out of range");
    mx[s] = std::max(mx[s], x(static_cast<Eigen::Index>(e), 0));
  }
  Matrix y(x.rows(), 1);
  std::vector<double> den(num_segments, 0.0);
  for (std::size_t e = 0; e < segments.size(); ++e) {
    const auto i = static_cast<Eigen::Index>(e);
    y(i, 0) = std::exp(x(i, 0) - mx[segments[e]]);
    den[segments[e]] += y(i, 0);
  }
  for (std::size_t e = 0; e < segments.size(); ++e)
    y(static_cast<Eigen::Index>(e), 0) /= den[segments[e]];
  const int ia = logits.id();
  return logits.tape()->record(std::move(y), {logits},
                               [ia, segments, num_segments](Tape& t, int self) {
                                 const Matrix& g = t.grad_of(self);
                                 const Matrix& yv = t.value(self);
                                 std::vector<double> dot(num_segments, 0.0);
                                 for (std::size_t e = 0; e < segments.size(); ++e) {
                                   const auto i = static_cast<Eigen::Index>(e);
                                   dot[segments[e]] += g(i, 0) * yv(i, 0);
                                 }
                                 Matrix gx(yv.rows(), 1);
                                 for (std::size_t e = 0; e < segments.size(); ++e) {
                                   const auto i = static_cast<Eigen::Index>(e);
                                   gx(i, 0) = yv(i, 0) * (g(i, 0) - dot[segments[e]]);
                                 }
                                 t.accumulate(ia, gx);
                               });
}

Tensor segment_sum(const Tensor& values, const std::vector<int>& segments, int num_segments) {
  const Matrix& x = values.value();
  if (x.rows() != static_cast<Eigen::Index>(segments.size()))
    throw ShapeMismatch("segment_sum: " + shape_str(x) + " vs " +
                        std::to_string(segments.size()) + " segment ids");
  Matrix out = Matrix::Zero(num_segments, x.cols());
  for (std::size_t e = 0; e < segments.size(); ++e) {
    if (segments[e] < 0 || segments[e] >= num_segments)
      throw ShapeMismatch("segment id out of range");
    out.row(segments[e]) += x.row(static_cast<Eigen::Index>(e));
  }
  const int ia = values.id();
  return values.tape()->record(std::move(out), {values}, [ia, segments](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    Matrix gx(static_cast<Eigen::Index>(segments.size()), g.cols());
    for (std::size_t e = 0; e < segments.size(); ++e)
      gx.row(static_cast<Eigen::Index>(e)) = g.row(segments[e]);
    t.accumulate(ia, gx);
  });
}

Tensor masked_log_softmax(const Tensor& logits, const std::vector<char>& mask) {
  const Matrix& x = logits.value();
  if (x.cols() != 1 || x.rows() != static_cast<Eigen::Index>(mask.size()))
    throw ShapeMismatch("masked_log_softmax: " + shape_str(x) + " vs mask of " +
                        std::to_string(mask.size()));
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (mask[i]) mx = std::max(mx, x(i, 0));
  if (mx == -std::numeric_limits<double>::infinity()) throw EmptyMask("no selectable action");
  double z = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (mask[i]) z += std::exp(x(i, 0) - mx);
  const double lse = mx + std::log(z);
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out(i, 0) = mask[i] ? x(i, 0) - lse : -std::numeric_limits<double>::infinity();
  const int ia = logits.id();
  return logits.tape()->record(std::move(out), {logits}, [ia, mask](Tape& t, int self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& y = t.value(self);
    double gs = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      if (mask[i]) gs += g(i, 0);
    Matrix gx = Matrix::Zero(y.rows(), 1);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      if (mask[i]) gx(i, 0) = g(i, 0) - std::exp(y(i, 0)) * gs;
    t.accumulate(ia, gx);
  });
}

// ---- Gradient checking -------------------------------------------------

namespace {

constexpr double kRelFloor = 1e-6;
constexpr double kRelTol = 1e-4;
constexpr int kMaxNudges = 4;

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kRelFloor});
}

// Probes one coordinate. `eval` returns f at the current point; `analytic`
// returns the reverse-mode derivative there. Kinks show up as disagreeing
// one-sided differences, in which case the coordinate is shifted and retried.
double probe(double& x, double eps, const std::function<double()>& eval,
             const std::function<double()>& analytic, std::size_t& nudged) {
  const double x0 = x;
  double err = 0.0;
  for (int attempt = 0; attempt <= kMaxNudges; ++attempt) {
    const double base = x;
    const double a = analytic();
    const double f0 = eval();
    x = base + eps;
    const double fp = eval();
    x = base - eps;
    const double fm = eval();
    x = base;
    const double central = (fp - fm) / (2.0 * eps);
    err = rel_error(a, central);
    if (err <= kRelTol) break;
    const double fwd = (fp - f0) / eps;
    const double bwd = (f0 - fm) / eps;
    const bool kink = rel_error(fwd, bwd) > 10.0 * kRelTol;
    if (!kink || attempt == kMaxNudges) break;
    ++nudged;
    x = base + 37.0 * eps * (attempt + 1);
  }
  x = x0;
  return err;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, std::vector<Matrix> inputs, double eps) {
  GradCheckResult res;
  auto eval = [&]() {
    Tape tape;
    std::vector<Tensor> vars;
    for (const auto& m : inputs) vars.push_back(tape.constant(m));
    return fn(tape, vars).item();
  };
  std::size_t which = 0;
  Eigen::Index elem = 0;
  auto analytic = [&]() {
    Tape tape;
    std::vector<Tensor> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    Tensor out = fn(tape, vars);
    tape.backward(out);
    return vars[which].grad()(elem);
  };
  for (which = 0; which < inputs.size(); ++which) {
    for (elem = 0; elem < inputs[which].size(); ++elem) {
      const double err = probe(inputs[which](elem), eps, eval, analytic, res.nudged);
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  return res;
}

GradCheckResult grad_check_params(const ParamFn& fn, ParameterSet& params, double eps,
                                  std::size_t max_per_param, std::uint64_t seed,
                                  const std::function<bool(const std::string&)>& include) {
  GradCheckResult res;
  Rng rng(seed);
  auto eval = [&]() {
    Tape tape;
    return fn(tape, params).item();
  };
  std::string name;
  Eigen::Index elem = 0;
  auto analytic = [&]() {
    params.zero_grad();
    Tape tape;
    Tensor out = fn(tape, params);
    tape.backward(out);
    return params.entry(name).grad(elem);
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    name = params.entries()[p].name;
    if (include && !include(name)) continue;
    const auto n = params.entries()[p].value.size();
    std::vector<Eigen::Index> picks(static_cast<std::size_t>(n));
    std::iota(picks.begin(), picks.end(), 0);
    if (max_per_param > 0 && picks.size() > max_per_param) {
      for (std::size_t i = 0; i < max_per_param; ++i) {
        const int j = rng.uniform_int(static_cast<int>(i), static_cast<int>(picks.size()) - 1);
        std::swap(picks[i], picks[static_cast<std::size_t>(j)]);
      }
      picks.resize(max_per_param);
    }
    for (Eigen::Index e : picks) {
      elem = e;
      const double err = probe(params.entries()[p].value(e), eps, eval, analytic, res.nudged);
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  params.zero_grad();
  return res;
}

// ---- Adam ----------------------------------------------------------------

void Adam::step(ParameterSet& params) {
  for (const auto& e : params.entries())
    if (!e.has_grad) throw MissingGradient("parameter " + e.name + " has no gradient");
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& e : params.entries()) {
    double rate = lr;
    for (const auto& [prefix, scale] : lr_scales)
      if (e.name.starts_with(prefix)) rate = lr * scale;
    e.m = beta1 * e.m + (1.0 - beta1) * e.grad;
    e.v = beta2 * e.v + (1.0 - beta2) * e.grad.cwiseProduct(e.grad);
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      const double mh = e.m(i) / c1;
      const double vh = e.v(i) / c2;
      e.value(i) -= rate * mh / (std::sqrt(vh) + eps);
    }
  }
}

}  // namespace vnelab::ad
