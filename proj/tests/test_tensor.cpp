#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "vnelab/errors.hpp"
#include "vnelab/random.hpp"
#include "vnelab/selfcheck.hpp"
#include "vnelab/tensor.hpp"

using namespace vnelab;
using namespace vnelab::ad;

namespace {

Matrix random_matrix(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST_CASE("segment softmax of equal logits is uniform") {
  Tape t;
  const auto sm = segment_softmax(t.constant(Matrix::Zero(3, 1)), {0, 0, 0}, 1);
  for (int i = 0; i < 3; ++i) CHECK(sm.value()(i, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("property: segment softmax sums to one per segment") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = rng.uniform_int(1, 30);
    const int segs = rng.uniform_int(1, 5);
    std::vector<int> seg(static_cast<std::size_t>(rows));
    for (auto& s : seg) s = rng.uniform_int(0, segs - 1);
    Matrix logits = random_matrix(rng, rows, 1) * 50.0;
    Tape t;
    const Matrix sm = segment_softmax(t.constant(logits), seg, segs).value();
    std::vector<double> total(static_cast<std::size_t>(segs), 0.0);
    std::vector<int> count(static_cast<std::size_t>(segs), 0);
    for (int i = 0; i < rows; ++i) {
      total[static_cast<std::size_t>(seg[static_cast<std::size_t>(i)])] += sm(i, 0);
      ++count[static_cast<std::size_t>(seg[static_cast<std::size_t>(i)])];
    }
    for (int s = 0; s < segs; ++s)
      if (count[static_cast<std::size_t>(s)] > 0)
        REQUIRE(std::abs(total[static_cast<std::size_t>(s)] - 1.0) <= 1e-12);
  }
}

TEST_CASE("backward of a sum yields ones") {
  Tape t;
  const auto x = t.variable(Matrix::Constant(2, 3, 0.7));
  t.backward(sum(x));
  CHECK(x.grad() == Matrix::Ones(2, 3));
}

TEST_CASE("shared subexpressions accumulate gradient") {
  Tape t;
  const auto x = t.variable(Matrix::Constant(1, 1, 3.0));
  const auto y = add(mul(x, x), scale(x, 2.0));
  t.backward(y);
  CHECK(x.grad()(0, 0) == 8.0);
}

TEST_CASE("shape mismatches name both shapes") {
  Tape t;
  const auto a = t.constant(Matrix::Zero(2, 3));
  const auto b = t.constant(Matrix::Zero(4, 5));
  CHECK_THROWS_AS(add(a, b), ShapeMismatch);
  CHECK_THROWS_AS(matmul(a, a), ShapeMismatch);
  try {
    matmul(a, a);
  } catch (const ShapeMismatch& e) {
    CHECK(std::string(e.what()).find("2x3") != std::string::npos);
  }
}

TEST_CASE("masked log-softmax excludes masked entries") {
  Tape t;
  Matrix logits(3, 1);
  logits << 1.0, 5.0, 1.0;
  const auto x = t.variable(logits);
  const auto lp = masked_log_softmax(x, {1, 0, 1});
  CHECK(lp.value()(0, 0) == doctest::Approx(std::log(0.5)));
  CHECK(std::isinf(lp.value()(1, 0)));
  t.backward(sum(gather_rows(lp, {0, 2})));
  CHECK(x.grad()(1, 0) == 0.0);
  CHECK_THROWS_AS(masked_log_softmax(t.constant(logits), {0, 0, 0}), EmptyMask);
}

TEST_CASE("linear functions check exactly") {
  Rng rng(2);
  const auto r = grad_check([](Tape& t, const std::vector<Tensor>& x) {
    return sum(scale(x[0], 3.0));
  }, {random_matrix(rng, 4, 4)});
  CHECK(r.max_rel_error <= 1e-10);
}

TEST_CASE("dead relu regions have zero gradient on both sides") {
  const auto r = grad_check([](Tape&, const std::vector<Tensor>& x) {
    return sum(relu(x[0]));
  }, {Matrix::Constant(2, 2, -1.0)});
  CHECK(r.max_rel_error == 0.0);
  Tape t;
  const auto x = t.variable(Matrix::Constant(2, 2, -1.0));
  t.backward(sum(relu(x)));
  CHECK(x.grad().isZero());
}

TEST_CASE("every op family passes finite differences") {
  for (const auto& row : gradcheck_suite(3)) {
    INFO(row.family);
    CHECK(row.result.max_rel_error <= kGradCheckTolerance);
    CHECK(row.result.checked > 0);
  }
}

TEST_CASE("property: ops stay correct over random shapes") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = rng.uniform_int(1, 5), c = rng.uniform_int(1, 5), k = rng.uniform_int(1, 5);
    const auto res = grad_check([](Tape& t, const std::vector<Tensor>& x) {
      const Tensor h = leaky_relu(add(matmul(x[0], x[1]), x[2]));
      const Tensor w = t.constant(Matrix::Constant(h.rows(), h.cols(), 0.3));
      return add(mse(tanh(h), w), mean(exp(clamp(h, -2.0, 2.0))));
    }, {random_matrix(rng, r, c), random_matrix(rng, c, k), random_matrix(rng, 1, k)});
    REQUIRE(res.max_rel_error <= 1e-4);
  }
}

TEST_CASE("adam updates") {
  Rng rng(5);
  ParameterSet p;
  p.add("w", 1, 1, rng)(0, 0) = 1.0;
  p.add("z", 2, 2, rng);
  const Matrix z0 = p.value("z");
  Adam opt;
  p.zero_grad();
  p.entry("w").grad(0, 0) = 2.0;  // d(w^2)/dw at 1
  p.entry("w").has_grad = true;
  p.entry("z").grad.setZero();
  p.entry("z").has_grad = true;
  opt.step(p);
  CHECK(p.value("w")(0, 0) < 1.0);
  CHECK(p.value("z") == z0);

  ParameterSet missing;
  missing.add_zeros("q", 1, 1);
  missing.zero_grad();
  CHECK_THROWS_AS(Adam{}.step(missing), MissingGradient);
}

TEST_CASE("adam is deterministic") {
  auto run = [] {
    Rng rng(6);
    ParameterSet p;
    p.add("w", 3, 2, rng);
    Adam opt;
    for (int i = 0; i < 10; ++i) {
      Tape t;
      t.backward(sum(square(t.param(p, "w"))));
      opt.step(p);
      p.zero_grad();
    }
    return p;
  };
  CHECK(run().values_equal(run()));
}

TEST_CASE("parameter names are unique") {
  Rng rng(7);
  ParameterSet p;
  p.add("a", 1, 1, rng);
  CHECK_THROWS_AS(p.add("a", 1, 1, rng), InvariantViolation);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  Rng rng(8);
  ParameterSet p;
  p.add("enc.w", 3, 4, rng);
  p.add("head.b", 1, 1, rng)(0, 0) = std::numeric_limits<double>::denorm_min();
  std::stringstream buf;
  p.save(buf);
  const auto q = ParameterSet::load(buf);
  CHECK(q.values_equal(p));
  std::stringstream again;
  q.save(again);
  std::stringstream first;
  p.save(first);
  CHECK(again.str() == first.str());

  std::stringstream truncated(first.str().substr(0, first.str().size() / 2));
  CHECK_THROWS_AS(ParameterSet::load(truncated), CheckpointError);
}
