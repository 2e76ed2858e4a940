#ifndef CLC_METRICS_HPP_
#define CLC_METRICS_HPP_

#include <cstddef>
#include <optional>
#include <vector>

#include "clc/data.hpp"
#include "clc/matrix.hpp"
#include "clc/model.hpp"
#include "clc/rng.hpp"

namespace clc {

struct ContingencyTable {
  std::vector<std::vector<long long>> counts;  // pred x true
  std::size_t n = 0;
};

ContingencyTable contingency(const std::vector<int>& pred, const std::vector<int>& truth);

// Fraction matched under the best cluster-to-class assignment (exact
// optimal matching on the padded contingency table).
double hungarian_accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

// Mutual information normalized by the arithmetic mean of the two
// entropies. Both-sides-constant is defined as 1.
double nmi(const std::vector<int>& pred, const std::vector<int>& truth);

// Adjusted Rand index via pair counting.
double ari(const std::vector<int>& pred, const std::vector<int>& truth);

// Shannon entropy of the empirical cluster-size distribution, in [0, ln k].
// The degeneracy diagnostic: collapse to one cluster scores 0.
double assignment_entropy(const std::vector<int>& pred, std::size_t k);

struct SimilarityCell {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t pairs = 0;
};

// Mean/std of pairwise dot products per part and pair class. "augmented"
// compares two views of the same instance; "same" and "different" compare
// distinct instances (un-augmented) within and across true classes. A cell
// is absent when no eligible pair exists.
struct SimilarityStats {
  std::optional<SimilarityCell> zc_augmented, zc_same, zc_different;
  std::optional<SimilarityCell> zn_augmented, zn_same, zn_different;
};

SimilarityStats similarity_stats(const MlpSpec& spec, const Params& params, const Dataset& ds,
                                 const AugmentationPolicy& policy, Rng& rng,
                                 std::size_t max_pairs_per_class = 100000);

struct ClusterMetrics {
  std::optional<double> acc, nmi, ari;
  double entropy = 0.0;
};

std::vector<int> predict_clusters(const MlpSpec& spec, const Params& params, const Matrix& x,
                                  double t);

// Argmax cluster probabilities on un-augmented inputs; label-dependent
// metrics are absent for unlabeled data.
ClusterMetrics evaluate(const MlpSpec& spec, const Params& params, const Dataset& ds, double t);

}  // namespace clc

#endif  // CLC_METRICS_HPP_
