#include <doctest.h>

#include <cmath>

#include "clc/autodiff.hpp"
#include "clc/rng.hpp"

using namespace clc;

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("fan-out accumulates: d(sum(x + x))/dx = 2") {
  Tape tape;
  Var x = tape.leaf(Matrix::from_rows({{1, 2}, {3, 4}}));
  Var loss = tape.sum_all(tape.add(x, x));
  tape.backward(loss);
  const Matrix& g = tape.grad(x);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == 2.0);
}

TEST_CASE("constants carry no gradient") {
  Tape tape;
  Var c = tape.constant(Matrix::from_rows({{1, 2}}));
  Var x = tape.leaf(Matrix::from_rows({{3, 4}}));
  Var loss = tape.sum_all(tape.hadamard(c, x));
  tape.backward(loss);
  CHECK(!c.requires_grad());
  CHECK_THROWS_AS(tape.grad(c), ContractError);
  CHECK(tape.grad(x) == Matrix::from_rows({{1, 2}}));
}

TEST_CASE("loss = sum(x) gives all-ones gradient; 0*f(x) gives zeros") {
  {
    Tape tape;
    Var x = tape.leaf(Matrix(3, 2, 5.0));
    tape.backward(tape.sum_all(x));
    CHECK(tape.grad(x) == Matrix::ones(3, 2));
  }
  {
    Tape tape;
    Var x = tape.leaf(Matrix::from_rows({{1, -2}, {0.5, 3}}));
    Var loss = tape.scale(tape.sum_all(tape.exp(x)), 0.0);
    tape.backward(loss);
    CHECK(tape.grad(x) == Matrix::zeros(2, 2));
  }
}

TEST_CASE("backward demands a scalar and runs once") {
  Tape tape;
  Var x = tape.leaf(Matrix(2, 2, 1.0));
  Var y = tape.add(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
  Var loss = tape.sum_all(y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
  CHECK_THROWS_AS(tape.leaf(Matrix(1, 1)), ContractError);
  tape.clear();
  CHECK(tape.size() == 0);
}

TEST_CASE("stop-gradient: detached branch contributes nothing") {
  Tape tape;
  Var x = tape.leaf(Matrix::from_rows({{2, 3}}));
  Var frozen = tape.detach(x);
  CHECK(!frozen.requires_grad());
  Var loss = tape.sum_all(tape.hadamard(x, frozen));
  tape.backward(loss);
  // d/dx of x * const(x0) is exactly x0, not 2 x0.
  CHECK(tape.grad(x) == Matrix::from_rows({{2, 3}}));
}

TEST_CASE("linearity: fan-out gradient equals sum of branch gradients exactly") {
  Rng rng(21);
  const Matrix x0 = random_uniform(rng, 3, 3, -1.0, 1.0);
  const Matrix a = random_uniform(rng, 3, 3, -1.0, 1.0);
  const Matrix b = random_uniform(rng, 3, 3, -1.0, 1.0);

  Tape joint;
  Var x = joint.leaf(x0);
  Var loss = joint.add(joint.sum_all(joint.hadamard(joint.constant(a), x)),
                       joint.sum_all(joint.hadamard(joint.constant(b), x)));
  joint.backward(loss);
  const Matrix got = joint.grad(x);

  Tape t1;
  Var x1 = t1.leaf(x0);
  t1.backward(t1.sum_all(t1.hadamard(t1.constant(a), x1)));
  Tape t2;
  Var x2 = t2.leaf(x0);
  t2.backward(t2.sum_all(t2.hadamard(t2.constant(b), x2)));
  CHECK(got == add(t1.grad(x1), t2.grad(x2)));
}

TEST_CASE("chain matmul -> softmax -> weighted mean matches finite differences") {
  Rng rng(31);
  const Matrix c = random_uniform(rng, 4, 5, -1.0, 1.0);
  const Matrix w = random_uniform(rng, 3, 5, -1.0, 1.0);
  const TapeFn f = [&](Tape& t, Var x) {
    Var s = t.softmax_rows(t.matmul(x, t.constant(c)));
    return t.mean_all(t.hadamard(t.constant(w), s));
  };
  const Matrix x0 = random_uniform(rng, 3, 4, -1.0, 1.0);
  CHECK(finite_diff_check(f, x0, 1e-6) < 1e-6);
}

TEST_CASE("finite_diff_check basics") {
  // f(x) = x^2 at x = 3: analytic gradient 6.
  const TapeFn square = [](Tape& t, Var x) { return t.sum_all(t.hadamard(x, x)); };
  CHECK(finite_diff_check(square, Matrix::from_rows({{3}}), 1e-6) < 1e-8);

  // Linear f: error at machine-epsilon level.
  const TapeFn linear = [](Tape& t, Var x) { return t.sum_all(t.scale(x, 2.5)); };
  CHECK(finite_diff_check(linear, Matrix::from_rows({{1, -2, 0.5}}), 1e-6) < 1e-8);

  CHECK_THROWS_AS(finite_diff_check(square, Matrix::from_rows({{1}}), 0.0), ContractError);
  CHECK_THROWS_AS(finite_diff_check(square, Matrix::from_rows({{1}}), 0.1), ContractError);
}

// Every differentiable op, 20 random instances each, against central
// differences at step 1e-6.
TEST_CASE("per-op gradients match finite differences") {
  Rng rng(77);
  const double kTol = 1e-5;
  const double kStep = 1e-6;

  auto weighted = [](Tape& t, Var y, const Matrix& w) {
    return t.sum_all(t.hadamard(t.constant(w), y));
  };

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix w34 = random_uniform(rng, 3, 4, -1.0, 1.0);
    const Matrix w43 = random_uniform(rng, 4, 3, -1.0, 1.0);
    const Matrix w31 = random_uniform(rng, 3, 1, -1.0, 1.0);
    const Matrix w35 = random_uniform(rng, 3, 5, -1.0, 1.0);
    const Matrix c45 = random_uniform(rng, 4, 5, -1.0, 1.0);
    const Matrix c34 = random_uniform(rng, 3, 4, -1.0, 1.0);

    const Matrix x34 = random_uniform(rng, 3, 4, -2.0, 2.0);
    const Matrix x34_pos = random_uniform(rng, 3, 4, 0.5, 3.0);
    const Matrix x14 = random_uniform(rng, 1, 4, -2.0, 2.0);

    CHECK(finite_diff_check([&](Tape& t, Var x) { return weighted(t, t.exp(x), w34); }, x34,
                            kStep) < kTol);
    CHECK(finite_diff_check([&](Tape& t, Var x) { return weighted(t, t.log(x), w34); },
                            x34_pos, kStep) < kTol);
    CHECK(finite_diff_check([&](Tape& t, Var x) { return weighted(t, t.tanh(x), w34); }, x34,
                            kStep) < kTol);
    CHECK(finite_diff_check([&](Tape& t, Var x) { return weighted(t, t.softmax_rows(x), w34); },
                            x34, kStep) < kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) { return weighted(t, t.log_sum_exp_rows(x), w31); }, x34,
              kStep) < kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) { return weighted(t, t.row_l2_normalize(x), w34); }, x34_pos,
              kStep) < kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) { return weighted(t, t.matmul(x, t.constant(c45)), w35); },
              x34, kStep) < kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) { return weighted(t, t.matmul(t.constant(c34), x), w35); },
              random_uniform(rng, 4, 5, -2.0, 2.0), kStep) < kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) { return weighted(t, t.transpose(x), w43); }, x34, kStep) <
          kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) {
                return weighted(t, t.concat_cols(x, t.constant(c34)), random_uniform(rng, 3, 8,
                                                                                     -1.0, 1.0));
              },
              x34, kStep) < kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) {
                return weighted(t, t.slice_cols(x, 1, 3), random_uniform(rng, 3, 2, -1.0, 1.0));
              },
              x34, kStep) < kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) {
                return weighted(t, t.add_row_broadcast(t.constant(c34), x), w34);
              },
              x14, kStep) < kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) { return weighted(t, t.take_diag(x), w31); }, x34, kStep) <
          kTol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var x) { return t.mean_all(t.hadamard(x, t.constant(c34))); }, x34,
              kStep) < kTol);
  }
}

TEST_SUITE_END();
