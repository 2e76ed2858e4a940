#ifndef CLC_LOSSES_HPP_
#define CLC_LOSSES_HPP_

#include <cstddef>
#include <optional>
#include <vector>

#include "clc/autodiff.hpp"
#include "clc/matrix.hpp"
#include "clc/model.hpp"
#include "clc/sinkhorn.hpp"

namespace clc {

// Pairwise similarities between B queries and M keys (M = B, or B plus
// queue entries), split into the cluster part and the instance part.
// s = sc + sn holds entrywise; positive[i] is the key column of query i's
// positive pair (column i when keys are batch-aligned).
struct SimilarityDecomposition {
  Matrix s;
  Matrix sc;
  Matrix sn;
  std::vector<std::size_t> positive;
};

struct NegativeWeights {
  Matrix lambda;  // lambda(i,j) = exp((sc(i,j) - sc(i,pos_i)) / tau); 1 at the positive
};

struct LossBreakdown {
  double infonce = 0.0;
  double equipartition_ce = 0.0;
  std::optional<double> self_label;
  double alpha = 0.0;
  double total = 0.0;
};

// The same contrastive loss evaluated three algebraically equivalent ways:
// directly on s, as an instance-similarity softmax with cluster-derived
// negative weights, and symmetrically with the roles of the parts swapped.
struct InfonceForms {
  double plain = 0.0;
  double weighted_instance = 0.0;
  double weighted_cluster = 0.0;
};

SimilarityDecomposition similarity_decompose(const Representation& query,
                                             const Representation& keys,
                                             const Matrix* queue_zc = nullptr,
                                             const Matrix* queue_zn = nullptr);

// Mean over queries of -log softmax probability of the positive key at
// temperature tau; the denominator counts every key column once.
double infonce(const SimilarityDecomposition& dec, double tau);

InfonceForms infonce_decomposed(const SimilarityDecomposition& dec, double tau);

NegativeWeights negative_weights(const SimilarityDecomposition& dec, double tau);

// Per-sample gradient of the contrastive loss w.r.t. the instance
// similarities: the weighted-softmax form for off-positive entries, and
// minus their sum at the positive. This is the hand-derived oracle that
// autodiff is checked against; it never touches the tape.
Matrix analytic_negative_gradient(const SimilarityDecomposition& dec, double tau);

// softmax(zc / t) rowwise.
Matrix cluster_probs(const Matrix& zc, double t);

// Swapped-prediction cross entropy: assignments of one view supervise the
// probabilities of the other. Targets are assignment columns rescaled to
// sum to 1; mean over samples, summed over clusters, halved.
double equipartition_ce(const Matrix& zc_q, const Matrix& zc_k, const AssignmentMatrix& q_q,
                        const AssignmentMatrix& q_k, double t);

// Cross entropy between argmax pseudo-labels of confident weak-view
// predictions (max prob > threshold) and the strong-view probabilities;
// zero when nothing is confident.
double self_label_loss(const Matrix& probs_weak, const Matrix& probs_strong, double threshold);

LossBreakdown clc_objective(const SimilarityDecomposition& dec, const Matrix& zc_q,
                            const Matrix& zc_k, const AssignmentMatrix& q_q,
                            const AssignmentMatrix& q_k, double tau, double t, double alpha);

// --- tape builders (training path) ---

// s has positives on the diagonal.
Var infonce_node(Tape& tape, Var s, double tau);

// zc_k, q_q, q_k are data (stop-gradient); only zc_q carries gradient.
Var equipartition_ce_node(Tape& tape, Var zc_q, const Matrix& zc_k, const AssignmentMatrix& q_q,
                          const AssignmentMatrix& q_k, double t);

// Returns the loss node and reports how many samples were confident.
Var self_label_node(Tape& tape, Var zc_strong, const Matrix& probs_weak, double threshold,
                    double t, std::size_t* confident_count);

}  // namespace clc

#endif  // CLC_LOSSES_HPP_
