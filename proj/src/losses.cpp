#include "clc/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace clc {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature tau must be > 0");
}

void check_t(double t) {
  if (!(t > 0.0)) throw ConfigError("temperature t must be > 0");
}

void check_decomposition(const SimilarityDecomposition& dec) {
  if (!dec.s.same_shape(dec.sc) || !dec.s.same_shape(dec.sn)) {
    throw ShapeError("SimilarityDecomposition: part shapes differ");
  }
  if (dec.positive.size() != dec.s.rows()) {
    throw ContractError("SimilarityDecomposition: positive index per row required");
  }
  for (std::size_t i = 0; i < dec.positive.size(); ++i) {
    if (dec.positive[i] >= dec.s.cols()) {
      throw ContractError("SimilarityDecomposition: positive index out of range");
    }
  }
}

double lse_row(const std::vector<double>& terms) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : terms) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : terms) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace

SimilarityDecomposition similarity_decompose(const Representation& query,
                                             const Representation& keys,
                                             const Matrix* queue_zc, const Matrix* queue_zn) {
  if (query.zc.cols() != keys.zc.cols() || query.zn.cols() != keys.zn.cols()) {
    throw ShapeError("similarity_decompose: query/key widths differ");
  }
  if ((queue_zc == nullptr) != (queue_zn == nullptr)) {
    throw ContractError("similarity_decompose: queue parts must come together");
  }
  Matrix kc = keys.zc, kn = keys.zn;
  if (queue_zc != nullptr && queue_zc->rows() > 0) {
    if (queue_zc->cols() != keys.zc.cols() || queue_zn->cols() != keys.zn.cols() ||
        queue_zc->rows() != queue_zn->rows()) {
      throw ShapeError("similarity_decompose: queue widths differ from keys");
    }
    Matrix kc2(kc.rows() + queue_zc->rows(), kc.cols());
    Matrix kn2(kn.rows() + queue_zn->rows(), kn.cols());
    for (std::size_t i = 0; i < kc.rows(); ++i) {
      for (std::size_t j = 0; j < kc.cols(); ++j) kc2(i, j) = kc(i, j);
      for (std::size_t j = 0; j < kn.cols(); ++j) kn2(i, j) = kn(i, j);
    }
    for (std::size_t i = 0; i < queue_zc->rows(); ++i) {
      for (std::size_t j = 0; j < kc.cols(); ++j) kc2(kc.rows() + i, j) = (*queue_zc)(i, j);
      for (std::size_t j = 0; j < kn.cols(); ++j) kn2(kn.rows() + i, j) = (*queue_zn)(i, j);
    }
    kc = std::move(kc2);
    kn = std::move(kn2);
  }
  SimilarityDecomposition dec;
  dec.sc = matmul(query.zc, transpose(kc));
  dec.sn = matmul(query.zn, transpose(kn));
  dec.s = add(dec.sc, dec.sn);
  dec.positive.resize(query.zc.rows());
  for (std::size_t i = 0; i < dec.positive.size(); ++i) dec.positive[i] = i;
  if (dec.s.cols() < dec.s.rows()) {
    throw ShapeError("similarity_decompose: fewer keys than queries");
  }
  return dec;
}

double infonce(const SimilarityDecomposition& dec, double tau) {
  check_tau(tau);
  check_decomposition(dec);
  const std::size_t b = dec.s.rows(), m = dec.s.cols();
  double total = 0.0;
  std::vector<double> terms(m);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < m; ++j) terms[j] = dec.s(i, j) / tau;
    total += lse_row(terms) - dec.s(i, dec.positive[i]) / tau;
  }
  return total / static_cast<double>(b);
}

InfonceForms infonce_decomposed(const SimilarityDecomposition& dec, double tau) {
  check_tau(tau);
  check_decomposition(dec);
  const std::size_t b = dec.s.rows(), m = dec.s.cols();
  InfonceForms out;
  out.plain = infonce(dec, tau);

  // Instance-similarity softmax with cluster-derived weights on negatives:
  //   -log exp(sn_pos/tau) / (sum_{j != pos} lambda_j exp(sn_j/tau) + exp(sn_pos/tau))
  // and its mirror with the parts swapped.
  std::vector<double> terms(m);
  double sum_instance = 0.0, sum_cluster = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t pos = dec.positive[i];
    for (std::size_t j = 0; j < m; ++j) {
      terms[j] = (j == pos) ? dec.sn(i, pos) / tau
                            : (dec.sc(i, j) - dec.sc(i, pos) + dec.sn(i, j)) / tau;
    }
    sum_instance += lse_row(terms) - dec.sn(i, pos) / tau;
    for (std::size_t j = 0; j < m; ++j) {
      terms[j] = (j == pos) ? dec.sc(i, pos) / tau
                            : (dec.sn(i, j) - dec.sn(i, pos) + dec.sc(i, j)) / tau;
    }
    sum_cluster += lse_row(terms) - dec.sc(i, pos) / tau;
  }
  out.weighted_instance = sum_instance / static_cast<double>(b);
  out.weighted_cluster = sum_cluster / static_cast<double>(b);
  return out;
}

NegativeWeights negative_weights(const SimilarityDecomposition& dec, double tau) {
  check_tau(tau);
  check_decomposition(dec);
  Matrix lambda(dec.sc.rows(), dec.sc.cols());
  for (std::size_t i = 0; i < lambda.rows(); ++i) {
    const std::size_t pos = dec.positive[i];
    for (std::size_t j = 0; j < lambda.cols(); ++j) {
      lambda(i, j) = std::exp((dec.sc(i, j) - dec.sc(i, pos)) / tau);
    }
    lambda(i, pos) = 1.0;
  }
  ensure_finite(lambda, "negative_weights");
  return {std::move(lambda)};
}

Matrix analytic_negative_gradient(const SimilarityDecomposition& dec, double tau) {
  check_tau(tau);
  check_decomposition(dec);
  const std::size_t b = dec.s.rows(), m = dec.s.cols();
  Matrix grad(b, m);
  std::vector<double> terms(m);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t pos = dec.positive[i];
    // lambda_j * exp(sn_j/tau) evaluated as one exponent so the softmax can
    // be max-shifted.
    for (std::size_t j = 0; j < m; ++j) {
      terms[j] = (j == pos) ? dec.sn(i, pos) / tau
                            : (dec.sc(i, j) - dec.sc(i, pos) + dec.sn(i, j)) / tau;
    }
    const double denom = lse_row(terms);
    for (std::size_t j = 0; j < m; ++j) {
      const double p = std::exp(terms[j] - denom);
      grad(i, j) = (j == pos) ? (p - 1.0) / tau : p / tau;
    }
  }
  ensure_finite(grad, "analytic_negative_gradient");
  return grad;
}

Matrix cluster_probs(const Matrix& zc, double t) {
  check_t(t);
  return softmax_rows(scale(zc, 1.0 / t));
}

double equipartition_ce(const Matrix& zc_q, const Matrix& zc_k, const AssignmentMatrix& q_q,
                        const AssignmentMatrix& q_k, double t) {
  check_t(t);
  const std::size_t b = zc_q.rows(), k = zc_q.cols();
  if (!zc_q.same_shape(zc_k)) throw ShapeError("equipartition_ce: view shapes differ");
  if (q_q.q.rows() != k || q_q.q.cols() != b || q_k.q.rows() != k || q_k.q.cols() != b) {
    throw ShapeError("equipartition_ce: assignment must be K x B");
  }
  const Matrix log_p_q = log_softmax_rows(scale(zc_q, 1.0 / t));
  const Matrix log_p_k = log_softmax_rows(scale(zc_k, 1.0 / t));
  // Assignment columns sum to 1/B; rescale by B so each sample's target is a
  // distribution over clusters.
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double tq = static_cast<double>(b) * q_q.q(j, i);
      const double tk = static_cast<double>(b) * q_k.q(j, i);
      total += tq * log_p_k(i, j) + tk * log_p_q(i, j);
    }
  }
  return -0.5 * total / static_cast<double>(b);
}

double self_label_loss(const Matrix& probs_weak, const Matrix& probs_strong, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("self_label_loss: threshold must lie in (0, 1)");
  }
  if (!probs_weak.same_shape(probs_strong)) {
    throw ShapeError("self_label_loss: prob shapes differ");
  }
  double total = 0.0;
  std::size_t confident = 0;
  for (std::size_t i = 0; i < probs_weak.rows(); ++i) {
    std::size_t arg = 0;
    double best = probs_weak(i, 0);
    for (std::size_t j = 1; j < probs_weak.cols(); ++j) {
      if (probs_weak(i, j) > best) {
        best = probs_weak(i, j);
        arg = j;
      }
    }
    if (best > threshold) {
      ++confident;
      total += -std::log(std::max(probs_strong(i, arg), 1e-300));
    }
  }
  return confident == 0 ? 0.0 : total / static_cast<double>(confident);
}

LossBreakdown clc_objective(const SimilarityDecomposition& dec, const Matrix& zc_q,
                            const Matrix& zc_k, const AssignmentMatrix& q_q,
                            const AssignmentMatrix& q_k, double tau, double t, double alpha) {
  if (alpha < 0.0) throw ConfigError("clc_objective: alpha must be >= 0");
  LossBreakdown out;
  out.infonce = infonce(dec, tau);
  out.equipartition_ce = equipartition_ce(zc_q, zc_k, q_q, q_k, t);
  out.alpha = alpha;
  out.total = out.infonce + alpha * out.equipartition_ce;
  return out;
}

Var infonce_node(Tape& tape, Var s, double tau) {
  check_tau(tau);
  Var st = tape.scale(s, 1.0 / tau);
  Var per_sample = tape.sub(tape.log_sum_exp_rows(st), tape.take_diag(st));
  return tape.mean_all(per_sample);
}

Var equipartition_ce_node(Tape& tape, Var zc_q, const Matrix& zc_k, const AssignmentMatrix& q_q,
                          const AssignmentMatrix& q_k, double t) {
  check_t(t);
  const std::size_t b = zc_q.value().rows();
  const std::size_t k = zc_q.value().cols();
  if (q_q.q.rows() != k || q_q.q.cols() != b || q_k.q.rows() != k || q_k.q.cols() != b) {
    throw ShapeError("equipartition_ce_node: assignment must be K x B");
  }
  // log p_q with gradient; the key-view term is constant but still counts
  // toward the reported value.
  Var st = tape.scale(zc_q, 1.0 / t);
  Var log_p_q = tape.sub(st, tape.matmul(tape.log_sum_exp_rows(st),
                                         tape.constant(Matrix::ones(1, k))));
  Matrix target_k(b, k), target_q(b, k);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      target_k(i, j) = static_cast<double>(b) * q_k.q(j, i);
      target_q(i, j) = static_cast<double>(b) * q_q.q(j, i);
    }
  }
  const Matrix log_p_k = log_softmax_rows(scale(zc_k, 1.0 / t));
  Matrix const_term(1, 1);
  const_term(0, 0) = sum(hadamard(target_q, log_p_k));
  Var grad_term = tape.sum_all(tape.hadamard(tape.constant(target_k), log_p_q));
  Var total = tape.add(grad_term, tape.constant(const_term));
  return tape.scale(total, -0.5 / static_cast<double>(b));
}

Var self_label_node(Tape& tape, Var zc_strong, const Matrix& probs_weak, double threshold,
                    double t, std::size_t* confident_count) {
  check_t(t);
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("self_label_node: threshold must lie in (0, 1)");
  }
  const std::size_t b = probs_weak.rows(), k = probs_weak.cols();
  if (zc_strong.value().rows() != b || zc_strong.value().cols() != k) {
    throw ShapeError("self_label_node: logits/probs shapes differ");
  }
  Matrix mask(b, k);
  std::size_t confident = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t arg = 0;
    double best = probs_weak(i, 0);
    for (std::size_t j = 1; j < k; ++j) {
      if (probs_weak(i, j) > best) {
        best = probs_weak(i, j);
        arg = j;
      }
    }
    if (best > threshold) {
      mask(i, arg) = 1.0;
      ++confident;
    }
  }
  if (confident_count != nullptr) *confident_count = confident;
  if (confident == 0) return tape.constant(Matrix::zeros(1, 1));
  Var st = tape.scale(zc_strong, 1.0 / t);
  Var log_p = tape.sub(st, tape.matmul(tape.log_sum_exp_rows(st),
                                       tape.constant(Matrix::ones(1, k))));
  Var picked = tape.sum_all(tape.hadamard(tape.constant(mask), log_p));
  return tape.scale(picked, -1.0 / static_cast<double>(confident));
}

}  // namespace clc
