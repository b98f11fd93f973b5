#include "doctest.h"

#include <array>
#include <cmath>

#include "etmapg/errors.hpp"
#include "etmapg/numerics/adam.hpp"
#include "etmapg/numerics/finite_diff.hpp"
#include "etmapg/numerics/init.hpp"
#include "etmapg/numerics/rng.hpp"
#include "etmapg/numerics/tape.hpp"
#include "oracles.hpp"

using namespace etmapg;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

oracle::Mat to_mat(const Tensor& t) {
  oracle::Mat m(t.rows(), std::vector<long double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

}  // namespace

TEST_CASE("tensor construction rejects bad shapes") {
  CHECK_THROWS_AS(Tensor({2, 0}), ConfigError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ConfigError);
  CHECK_THROWS_AS(Tensor::matrix(2, 2).item(), ContractViolation);
  CHECK(Tensor::scalar(4).item() == 4.0);
  CHECK(Tensor::vector({1, 2, 3}).rows() == 1);
  CHECK(Tensor::vector({1, 2, 3}).cols() == 3);
}

TEST_CASE("affine: zero input yields the bias in every row") {
  Tape tape;
  Rng rng(1);
  const Var x = tape.constant(Tensor::matrix(3, 4));
  const Var w = tape.constant(random_matrix(4, 2, rng));
  const Var b = tape.constant(Tensor::vector({0.25, -1.5}));
  const Tensor y = affine(x, w, b).value();
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(y.at(r, 0) == 0.25);
    CHECK(y.at(r, 1) == -1.5);
  }
}

TEST_CASE("affine: 1x1 identity") {
  Tape tape;
  const Tensor y = affine(tape.constant(Tensor::matrix(1, 1, {3.0})), tape.constant(Tensor::matrix(1, 1, {1.0})),
                          tape.constant(Tensor::vector({0.0})))
                       .value();
  CHECK(y.item() == 3.0);
}

TEST_CASE("affine matches a triple-loop product") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    const Tensor a = random_matrix(2, 3, rng), w = random_matrix(3, 2, rng);
    const Tensor bias = Tensor::vector({rng.uniform(), rng.uniform()});
    const Tensor y = affine(tape.constant(a), tape.constant(w), tape.constant(bias)).value();
    const oracle::Mat ref = oracle::matmul(to_mat(a), to_mat(w));
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(y.at(i, j) - static_cast<double>(ref[i][j] + bias[j])) < 1e-14);
  }
}

TEST_CASE("matmul shape mismatch is a configuration error") {
  Tape tape;
  CHECK_THROWS_AS(matmul(tape.constant(Tensor::matrix(2, 3)), tape.constant(Tensor::matrix(2, 3))), ConfigError);
}

TEST_CASE("softmax_rows: symmetric and two-class rows") {
  Tape tape;
  const Tensor p = softmax_rows(tape.constant(Tensor::matrix(2, 3, {0, 0, 0, 5, 5, 5}))).value();
  for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const double c = 2.5, k = 1.75;
  const Tensor q = softmax_rows(tape.constant(Tensor::matrix(1, 2, {c, c + k}))).value();
  CHECK(q[0] == doctest::Approx(1.0 / (1.0 + std::exp(k))).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(1.0 / (1.0 + std::exp(-k))).epsilon(1e-14));
}

TEST_CASE("softmax_rows matches an extended-precision evaluation") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    const Tensor z = random_matrix(3, 4, rng, 5.0);
    const Tensor p = softmax_rows(tape.constant(z)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<long double> row;
      for (std::size_t c = 0; c < 4; ++c) row.push_back(z.at(r, c));
      const auto ref = oracle::softmax(row);
      for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(p.at(r, c) - static_cast<double>(ref[c])) < 1e-15);
    }
  }
}

TEST_CASE("softmax_rows: rows sum to one and ignore constant shifts") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    Tensor z = random_matrix(4, 6, rng, 20.0);
    const Tensor p = softmax_rows(tape.constant(z)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      const double shift = rng.uniform(-100, 100);
      for (std::size_t c = 0; c < 6; ++c) z.at(r, c) += shift;
    }
    const Tensor q = softmax_rows(tape.constant(z)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        s += p.at(r, c);
        CHECK(std::abs(p.at(r, c) - q.at(r, c)) < 1e-9);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("log_softmax_rows stays finite for extreme logits") {
  Tape tape;
  const Tensor l = log_softmax_rows(tape.constant(Tensor::matrix(1, 3, {1000.0, -1000.0, 0.0}))).value();
  CHECK(l.all_finite());
  CHECK(l[0] == doctest::Approx(0.0));
}

TEST_CASE("backprop: square at 3 has gradient 6") {
  ParamStore ps;
  ps.add("theta", Tensor::scalar(3.0));
  Tape tape;
  tape.backward(sum(square(tape.param(ps, "theta"))));
  CHECK(ps.grad("theta").item() == 6.0);
}

TEST_CASE("backprop: disconnected parameter gets exactly zero") {
  ParamStore ps;
  ps.add("used", Tensor::scalar(2.0));
  ps.add("unused", Tensor::scalar(5.0));
  Tape tape;
  tape.param(ps, "unused");
  tape.backward(sum(tanh(tape.param(ps, "used"))));
  CHECK(ps.grad("unused").item() == 0.0);
  CHECK(ps.grad("used").item() != 0.0);
}

TEST_CASE("backprop rejects non-scalar losses") {
  Tape tape;
  CHECK_THROWS_AS(tape.backward(tape.constant(Tensor::matrix(2, 2))), ContractViolation);
}

TEST_CASE("backprop through a two-layer tanh MLP matches finite differences") {
  Rng rng(21);
  ParamStore ps;
  ps.add("w0", random_matrix(3, 5, rng));
  ps.add("b0", Tensor::vector({0.1, -0.2, 0.3, 0.0, 0.05}));
  ps.add("w1", random_matrix(5, 1, rng));
  ps.add("b1", Tensor::vector({0.2}));
  const Tensor x = random_matrix(4, 3, rng);
  const ScalarProgram mlp = [&](Tape& t, ParamStore& p) {
    const Var h = tanh(affine(t.constant(x), t.param(p, "w0"), t.param(p, "b0")));
    return sum(square(affine(h, t.param(p, "w1"), t.param(p, "b1"))));
  };
  CHECK(finite_diff_check(mlp, ps, 1e-5) <= 1e-4);
}

TEST_CASE("every differentiable op passes the finite-difference check") {
  Rng rng(5);
  ParamStore ps;
  ps.add("a", random_matrix(3, 4, rng));
  ps.add("b", random_matrix(3, 4, rng));
  ps.add("c", random_matrix(4, 2, rng));
  const std::array<int, 3> picks{1, 3, 0};
  const ScalarProgram prog = [&](Tape& t, ParamStore& p) {
    const Var a = t.param(p, "a"), b = t.param(p, "b"), c = t.param(p, "c");
    Var acc = sum(mul(sub(a, b), add(a, scale(b, 0.5))));
    acc = add(acc, mean(exp(scale(a, 0.3))));
    acc = add(acc, sum(log(add_scalar(square(b), 1.0))));
    acc = add(acc, sum(sigmoid(a)));
    acc = add(acc, sum(log_sigmoid(neg(b))));
    acc = add(acc, sum(mul(softmax_rows(a), log_softmax_rows(b))));
    acc = add(acc, sum(pick_cols(log_softmax_rows(a), picks)));
    acc = add(acc, sum(sum_rows(matmul(a, c))));
    const std::array<Var, 2> parts{slice_cols(a, 1, 3), b};
    acc = add(acc, sum(square(concat_cols(parts))));
    acc = add(acc, sum(minimum(clamp(a, -0.4, 0.4), b)));
    return acc;
  };
  CHECK(finite_diff_check(prog, ps, 1e-5) <= 1e-4);
}

TEST_CASE("attention building blocks pass the finite-difference check") {
  Rng rng(8);
  ParamStore ps;
  ps.add("q", random_matrix(2, 8, rng));
  ps.add("k", random_matrix(6, 8, rng));
  ps.add("v", random_matrix(6, 8, rng));
  const Tensor mask = Tensor::matrix(2, 3, {1, 0, 1, 1, 1, 1});
  const ScalarProgram prog = [&](Tape& t, ParamStore& p) {
    const Var w = masked_softmax_rows(head_scores(t.param(p, "q"), t.param(p, "k"), 2), mask);
    return sum(square(head_mix(w, t.param(p, "v"), 2)));
  };
  CHECK(finite_diff_check(prog, ps, 1e-5) <= 1e-4);
}

TEST_CASE("finite_diff_check: exact cases") {
  ParamStore ps;
  ps.add("x", Tensor::vector({0.7, -1.3, 2.0}));
  const Tensor coeff = Tensor::matrix(1, 3, {3.0, -2.0, 0.5});
  const ScalarProgram linear = [&](Tape& t, ParamStore& p) { return sum(mul(t.param(p, "x"), t.constant(coeff))); };
  CHECK(finite_diff_check(linear, ps, 1e-5) <= 1e-10);
  const ScalarProgram quadratic = [&](Tape& t, ParamStore& p) { return sum(square(t.param(p, "x"))); };
  CHECK(finite_diff_check(quadratic, ps, 1e-5) <= 1e-8);
  CHECK(ps.value("x")[0] == 0.7);
  CHECK_THROWS_AS(finite_diff_check(quadratic, ps, 0.0), ContractViolation);
}

TEST_CASE("operations are bitwise deterministic") {
  Rng rng(2);
  const Tensor a = random_matrix(5, 7, rng), w = random_matrix(7, 3, rng);
  Tape t1, t2;
  const Tensor y1 = softmax_rows(matmul(t1.constant(a), t1.constant(w))).value();
  const Tensor y2 = softmax_rows(matmul(t2.constant(a), t2.constant(w))).value();
  CHECK(y1 == y2);
}

TEST_CASE("value-only tapes give the same numbers as tracking tapes") {
  Rng rng(4);
  ParamStore ps;
  ps.add("w", random_matrix(4, 4, rng));
  const Tensor x = random_matrix(3, 4, rng);
  Tape tracked, plain(false);
  const Tensor a = tanh(matmul(tracked.constant(x), tracked.param(ps, "w"))).value();
  const Tensor b = tanh(matmul(plain.constant(x), plain.param(ps, "w"))).value();
  CHECK(a == b);
}

TEST_CASE("row results do not depend on batch size") {
  Rng rng(9);
  const Tensor w = random_matrix(6, 5, rng);
  const Tensor batch = random_matrix(8, 6, rng);
  Tape tb;
  const Tensor full = matmul(tb.constant(batch), tb.constant(w)).value();
  for (std::size_t r = 0; r < 8; ++r) {
    Tape ts;
    const auto row = batch.row(r);
    const Tensor one = matmul(ts.constant(Tensor::matrix(1, 6, {row.begin(), row.end()})), ts.constant(w)).value();
    for (std::size_t c = 0; c < 5; ++c) CHECK(one.at(0, c) == full.at(r, c));
  }
}

TEST_CASE("adam moves against the gradient by about the learning rate") {
  ParamStore ps;
  ps.add("x", Tensor::vector({1.0, -1.0}));
  ps.grad("x")[0] = 4.0;
  ps.grad("x")[1] = -0.5;
  Adam adam(AdamOptions{0.01});
  adam.step(ps);
  CHECK(ps.value("x")[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(ps.value("x")[1] == doctest::Approx(-0.99).epsilon(1e-6));
}

TEST_CASE("gradient clipping bounds the global norm") {
  ParamStore a, b;
  a.add("x", Tensor::vector({3.0}));
  b.add("y", Tensor::vector({4.0}));
  a.grad("x")[0] = 3.0;
  b.grad("y")[0] = 4.0;
  std::array<ParamStore*, 2> stores{&a, &b};
  CHECK(clip_gradient_norm(stores, 1.0) == doctest::Approx(5.0));
  CHECK(gradient_norm(stores) == doctest::Approx(1.0));
  CHECK(a.grad("x")[0] == doctest::Approx(0.6));
}

TEST_CASE("rng: derived streams are reproducible and distinct") {
  Rng a(42, 3, StreamPurpose::kEnvironment), b(42, 3, StreamPurpose::kEnvironment);
  Rng c(42, 4, StreamPurpose::kEnvironment), d(42, 3, StreamPurpose::kPolicySampling);
  const double x = a.uniform();
  CHECK(x == b.uniform());
  CHECK(x != c.uniform());
  CHECK(x != d.uniform());
  Rng e(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = e.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(e.below(7) < 7);
  }
}

TEST_CASE("glorot bounds") {
  Rng rng(0);
  const Tensor w = glorot_uniform(10, 6, rng);
  const double bound = std::sqrt(6.0 / 16.0);
  for (double v : w.values()) CHECK(std::abs(v) <= bound);
}
