#include <doctest.h>

#include <cmath>
#include <vector>

#include "clc/rng.hpp"
#include "clc/sinkhorn.hpp"

using namespace clc;

namespace {

// Independent oracle: plain linear-domain scaling in long double, one
// iterate = row step to 1/K then column step to 1/B. Returns the plan after
// each full iteration.
std::vector<Matrix> oracle_iterates(const Matrix& logits, double eps, int iterations) {
  const std::size_t b = logits.rows(), k = logits.cols();
  std::vector<long double> q(k * b);
  long double total = 0.0L;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      q[i * b + j] = std::exp(static_cast<long double>(logits(j, i)) / eps);
      total += q[i * b + j];
    }
  }
  for (auto& v : q) v /= total;
  std::vector<Matrix> out;
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < k; ++i) {
      long double s = 0.0L;
      for (std::size_t j = 0; j < b; ++j) s += q[i * b + j];
      const long double f = (1.0L / static_cast<long double>(k)) / s;
      for (std::size_t j = 0; j < b; ++j) q[i * b + j] *= f;
    }
    for (std::size_t j = 0; j < b; ++j) {
      long double s = 0.0L;
      for (std::size_t i = 0; i < k; ++i) s += q[i * b + j];
      const long double f = (1.0L / static_cast<long double>(b)) / s;
      for (std::size_t i = 0; i < k; ++i) q[i * b + j] *= f;
    }
    Matrix snapshot(k, b);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        snapshot(i, j) = static_cast<double>(q[i * b + j]);
      }
    }
    out.push_back(std::move(snapshot));
  }
  return out;
}

// Tr(Q^T Z) + eps H(Q) with Z = logits^T.
double transport_objective(const Matrix& q, const Matrix& logits, double eps) {
  double value = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < q.cols(); ++j) {
      const double v = q(i, j);
      value += v * logits(j, i);
      if (v > 0.0) value -= eps * v * std::log(v);
    }
  }
  return value;
}

}  // namespace

TEST_SUITE_BEGIN("sinkhorn");

TEST_CASE("uniform logits give the exactly uniform plan") {
  const Matrix logits(6, 3, 0.37);
  const auto out = sinkhorn_solve(logits, {}, SinkhornMode::kFixedIterations);
  const double expect = 1.0 / (6.0 * 3.0);
  for (std::size_t i = 0; i < out.q.rows(); ++i) {
    for (std::size_t j = 0; j < out.q.cols(); ++j) {
      CHECK(std::abs(out.q(i, j) - expect) < 1e-12);
    }
  }
  CHECK(out.row_residual < 1e-12);
  CHECK(out.col_residual < 1e-12);
}

TEST_CASE("single cluster assigns 1/B everywhere") {
  Rng rng(2);
  const Matrix logits = random_uniform(rng, 5, 1, -1.0, 1.0);
  const auto out = sinkhorn_solve(logits, {}, SinkhornMode::kFixedIterations);
  CHECK(out.q.rows() == 1);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(std::abs(out.q(0, j) - 0.2) < 1e-12);
  }
}

TEST_CASE("three fixed iterations match the oracle's third iterate") {
  const Matrix logits = Matrix::from_rows({{1, 0}, {0, 1}});
  SinkhornConfig cfg;
  cfg.epsilon = 0.05;
  cfg.iterations = 3;
  const auto got = sinkhorn_solve(logits, cfg, SinkhornMode::kFixedIterations);
  const auto oracle = oracle_iterates(logits, 0.05, 3);
  CHECK(max_abs_diff(got.q, oracle.back()) < 1e-10);

  // And on random instances.
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 3 + rng.uniform_index(6);
    const std::size_t k = 2 + rng.uniform_index(3);
    const Matrix z = random_uniform(rng, b, k, -1.0, 1.0);
    const auto q3 = sinkhorn_solve(z, cfg, SinkhornMode::kFixedIterations);
    const auto ref = oracle_iterates(z, 0.05, 3);
    CHECK(max_abs_diff(q3.q, ref.back()) < 1e-10);
  }
}

TEST_CASE("long-run oracle agreement at convergence") {
  const Matrix logits = Matrix::from_rows({{1, 0}, {0, 1}});
  SinkhornConfig cfg;
  cfg.epsilon = 0.05;
  cfg.tolerance = 1e-13;
  const auto got = sinkhorn_solve(logits, cfg, SinkhornMode::kToConvergence);
  const auto oracle = oracle_iterates(logits, 0.05, 2000);
  CHECK(max_abs_diff(got.q, oracle.back()) < 1e-12);
  CHECK(got.row_residual < 1e-13);
  CHECK(got.col_residual < 1e-13);
}

TEST_CASE("marginal residuals") {
  Matrix q(4, 8, 1.0 / 32.0);
  auto [r0, c0] = marginal_residuals(q);
  CHECK(r0 == 0.0);
  CHECK(c0 == 0.0);
  for (std::size_t j = 0; j < 8; ++j) q(1, j) *= 2.0;
  auto [r1, c1] = marginal_residuals(q);
  CHECK(r1 == doctest::Approx(1.0 / 4.0).epsilon(1e-12));

  Rng rng(3);
  SinkhornConfig cfg;
  cfg.tolerance = 1e-9;
  const Matrix logits = random_uniform(rng, 10, 4, -1.0, 1.0);
  const auto out = sinkhorn_solve(logits, cfg, SinkhornMode::kToConvergence);
  CHECK(out.row_residual < 1e-8);
  CHECK(out.col_residual < 1e-8);
}

TEST_CASE("shift invariance") {
  Rng rng(5);
  const Matrix logits = random_uniform(rng, 7, 3, -1.0, 1.0);
  SinkhornConfig cfg;
  const auto a = sinkhorn_solve(logits, cfg, SinkhornMode::kFixedIterations);
  const auto b = sinkhorn_solve(add_scalar(logits, 0.8), cfg, SinkhornMode::kFixedIterations);
  CHECK(max_abs_diff(a.q, b.q) < 1e-10);
}

TEST_CASE("larger epsilon moves the plan toward uniform") {
  Rng rng(9);
  const Matrix logits = random_uniform(rng, 8, 4, -1.0, 1.0);
  const double uniform = 1.0 / (8.0 * 4.0);
  double prev = 1e300;
  for (double eps : {0.05, 0.1, 0.5, 1.0, 5.0}) {
    SinkhornConfig cfg;
    cfg.epsilon = eps;
    cfg.tolerance = 1e-11;
    const auto out = sinkhorn_solve(logits, cfg, SinkhornMode::kToConvergence);
    double dist = 0.0;
    for (std::size_t i = 0; i < out.q.size(); ++i) {
      dist = std::max(dist, std::abs(out.q.data()[i] - uniform));
    }
    CHECK(dist <= prev + 1e-12);
    prev = dist;
  }
}

TEST_CASE("each half-step satisfies the marginal it just scaled") {
  Rng rng(13);
  const Matrix logits = random_uniform(rng, 6, 3, -1.0, 1.0);
  SinkhornConfig cfg;
  cfg.iterations = 4;
  SinkhornTrace trace;
  sinkhorn_solve(logits, cfg, SinkhornMode::kFixedIterations, &trace);
  REQUIRE(trace.half_steps.size() == 8);
  for (std::size_t h = 0; h < trace.half_steps.size(); ++h) {
    auto [row_res, col_res] = marginal_residuals(trace.half_steps[h]);
    if (h % 2 == 0) {
      CHECK(row_res < 1e-12);  // row step just ran
    } else {
      CHECK(col_res < 1e-12);  // column step just ran
    }
  }
}

TEST_CASE("objective ascent: dual descends, optimum beats feasible rivals") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t b = 4 + rng.uniform_index(4);
    const std::size_t k = 2 + rng.uniform_index(3);
    const Matrix logits = random_uniform(rng, b, k, -1.0, 1.0);
    SinkhornConfig cfg;
    cfg.epsilon = trial % 2 == 0 ? 0.05 : 0.5;
    cfg.tolerance = 1e-11;
    SinkhornTrace trace;
    const auto out = sinkhorn_solve(logits, cfg, SinkhornMode::kToConvergence, &trace);

    // The scaling potentials' dual value never increases.
    for (std::size_t i = 1; i < trace.dual_values.size(); ++i) {
      CHECK(trace.dual_values[i] <= trace.dual_values[i - 1] + 1e-9);
    }

    // Entropy-regularized objective is non-decreasing along the iterates
    // that are feasible (both marginals within 1e-6).
    double prev = -1e300;
    for (const Matrix& q : trace.half_steps) {
      auto [rr, cr] = marginal_residuals(q);
      if (rr < 1e-6 && cr < 1e-6) {
        const double f = transport_objective(q, logits, cfg.epsilon);
        CHECK(f >= prev - 1e-9);
        prev = std::max(prev, f);
      }
    }

    // The converged plan beats the uniform plan and plans optimized for
    // other logits: constrained optimality.
    const double f_star = transport_objective(out.q, logits, cfg.epsilon);
    const Matrix uniform(k, b, 1.0 / static_cast<double>(k * b));
    CHECK(f_star >= transport_objective(uniform, logits, cfg.epsilon) - 1e-12);
    const Matrix rival_logits = random_uniform(rng, b, k, -1.0, 1.0);
    const auto rival = sinkhorn_solve(rival_logits, cfg, SinkhornMode::kToConvergence);
    CHECK(f_star >= transport_objective(rival.q, logits, cfg.epsilon) - 1e-9);
  }
}

TEST_CASE("batch smaller than cluster count is flagged but solved") {
  Rng rng(23);
  const Matrix logits = random_uniform(rng, 3, 5, -1.0, 1.0);
  const auto out = sinkhorn_solve(logits, {}, SinkhornMode::kFixedIterations);
  CHECK(out.batch_smaller_than_clusters);
  CHECK(out.q.rows() == 5);
  CHECK(out.q.cols() == 3);
  CHECK(out.q.all_finite());
}

TEST_CASE("log-domain path stays finite down to epsilon 0.01") {
  Rng rng(29);
  const Matrix logits = random_uniform(rng, 16, 4, -1.0, 1.0);
  SinkhornConfig cfg;
  cfg.epsilon = 0.01;
  cfg.iterations = 3;
  const auto fixed = sinkhorn_solve(logits, cfg, SinkhornMode::kFixedIterations);
  CHECK(fixed.q.all_finite());
  cfg.tolerance = 1e-9;
  const auto conv = sinkhorn_solve(logits, cfg, SinkhornMode::kToConvergence);
  CHECK(conv.q.all_finite());
}

TEST_CASE("config validation") {
  SinkhornConfig cfg;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.epsilon = 0.05;
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.iterations = 3;
  cfg.tolerance = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_SUITE_END();
