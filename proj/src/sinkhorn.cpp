#include "clc/sinkhorn.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace clc {

namespace {

constexpr std::size_t kMaxConvergenceIterations = 10000;

// log(sum(exp)) over a strided slice, max-shifted.
double lse(const double* base, std::size_t count, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count; ++i) mx = std::max(mx, base[i * stride]);
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) s += std::exp(base[i * stride] - mx);
  return mx + std::log(s);
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("sinkhorn: epsilon must be > 0");
  if (iterations < 1) throw ConfigError("sinkhorn: iterations must be >= 1");
  if (!(tolerance > 0.0)) throw ConfigError("sinkhorn: tolerance must be > 0");
}

std::pair<double, double> marginal_residuals(const Matrix& q) {
  const std::size_t k = q.rows(), b = q.cols();
  if (k == 0 || b == 0) throw ShapeError("marginal_residuals: empty matrix");
  double row_res = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (double v : q.row(i)) s += v;
    row_res = std::max(row_res, std::abs(s - 1.0 / static_cast<double>(k)));
  }
  double col_res = 0.0;
  for (std::size_t j = 0; j < b; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += q(i, j);
    col_res = std::max(col_res, std::abs(s - 1.0 / static_cast<double>(b)));
  }
  return {row_res, col_res};
}

AssignmentMatrix sinkhorn_solve(const Matrix& logits, const SinkhornConfig& cfg,
                                SinkhornMode mode, SinkhornTrace* trace) {
  cfg.validate();
  if (logits.rows() == 0 || logits.cols() == 0) {
    throw ShapeError("sinkhorn_solve: empty logits");
  }
  ensure_finite(logits, "sinkhorn_solve input");

  const std::size_t b = logits.rows();  // batch
  const std::size_t k = logits.cols();  // clusters
  const double log_rk = std::log(1.0 / static_cast<double>(k));
  const double log_cb = std::log(1.0 / static_cast<double>(b));

  // Work on A = Z / eps with Z = logits^T (K x B); the plan stays in the
  // scaled family log Q = A + alpha_k + beta_b throughout.
  Matrix a(k, b);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < b; ++j) a(i, j) = logits(j, i) / cfg.epsilon;
  }
  std::vector<double> alpha(k, 0.0), beta(b, 0.0);

  auto plan = [&]() {
    Matrix q(k, b);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < b; ++j) q(i, j) = std::exp(a(i, j) + alpha[i] + beta[j]);
    }
    return q;
  };
  auto record = [&]() {
    if (trace == nullptr) return;
    Matrix q = plan();
    trace->half_steps.push_back(q);
    double mean_alpha = 0.0, mean_beta = 0.0;
    for (double v : alpha) mean_alpha += v;
    for (double v : beta) mean_beta += v;
    mean_alpha /= static_cast<double>(k);
    mean_beta /= static_cast<double>(b);
    trace->dual_values.push_back(cfg.epsilon * sum(q) -
                                 cfg.epsilon * (mean_alpha + mean_beta));
  };

  auto row_step = [&]() {
    // alpha <- log(1/K) - lse_j(a + beta): row sums become exactly 1/K.
    for (std::size_t i = 0; i < k; ++i) {
      Matrix shifted(1, b);
      for (std::size_t j = 0; j < b; ++j) shifted(0, j) = a(i, j) + beta[j];
      alpha[i] = log_rk - lse(shifted.data(), b, 1);
    }
    record();
  };
  auto col_step = [&]() {
    for (std::size_t j = 0; j < b; ++j) {
      Matrix shifted(1, k);
      for (std::size_t i = 0; i < k; ++i) shifted(0, i) = a(i, j) + alpha[i];
      beta[j] = log_cb - lse(shifted.data(), k, 1);
    }
    record();
  };

  std::size_t iterations_run = 0;
  Matrix q;
  if (mode == SinkhornMode::kFixedIterations) {
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      row_step();
      col_step();
    }
    iterations_run = cfg.iterations;
    q = plan();
  } else {
    double row_res = std::numeric_limits<double>::infinity();
    double col_res = row_res;
    while (iterations_run < kMaxConvergenceIterations) {
      row_step();
      col_step();
      ++iterations_run;
      q = plan();
      std::tie(row_res, col_res) = marginal_residuals(q);
      if (row_res < cfg.tolerance && col_res < cfg.tolerance) break;
    }
  }

  AssignmentMatrix out;
  ensure_finite(q, "sinkhorn_solve");
  out.q = std::move(q);
  std::tie(out.row_residual, out.col_residual) = marginal_residuals(out.q);
  out.iterations_run = iterations_run;
  out.batch_smaller_than_clusters = b < k;
  return out;
}

}  // namespace clc
