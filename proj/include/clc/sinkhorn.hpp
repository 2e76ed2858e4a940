#ifndef CLC_SINKHORN_HPP_
#define CLC_SINKHORN_HPP_

#include <cstddef>
#include <utility>
#include <vector>

#include "clc/matrix.hpp"

namespace clc {

struct SinkhornConfig {
  double epsilon = 0.05;     // entropy regularization, > 0
  std::size_t iterations = 3;
  double tolerance = 1e-9;   // marginal residual target in convergence mode

  void validate() const;
};

enum class SinkhornMode {
  kFixedIterations,
  kToConvergence,
};

// Transport plan with uniform target marginals: rows sum to 1/K, columns to
// 1/B. Treat q as data, never as a differentiable quantity: assignments are
// a stop-gradient target by contract.
struct AssignmentMatrix {
  Matrix q;  // K x B, nonnegative
  double row_residual = 0.0;
  double col_residual = 0.0;
  std::size_t iterations_run = 0;
  // B < K makes perfect equipartition impossible; solved anyway, flagged.
  bool batch_smaller_than_clusters = false;
};

// Max-abs deviation of row sums from 1/K and column sums from 1/B.
std::pair<double, double> marginal_residuals(const Matrix& q);

// Test/diagnostic hook: the plan after every half-step plus the dual value
// (epsilon * mass - epsilon * (mean log u + mean log v)), which the
// alternating scaling minimizes monotonically.
struct SinkhornTrace {
  std::vector<Matrix> half_steps;
  std::vector<double> dual_values;
};

// Solves max Tr(Q^T Z) + epsilon H(Q) over plans with uniform marginals,
// where Z is `logits` transposed (rows of `logits` are per-sample cluster
// scores). Alternating row/column scaling in the log domain; one iteration
// is a row step followed by a column step, so returned columns satisfy
// their marginal exactly. Convergence mode iterates until both residuals
// drop below cfg.tolerance (capped at 10000 iterations).
AssignmentMatrix sinkhorn_solve(const Matrix& logits, const SinkhornConfig& cfg,
                                SinkhornMode mode, SinkhornTrace* trace = nullptr);

}  // namespace clc

#endif  // CLC_SINKHORN_HPP_
