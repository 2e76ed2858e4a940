#ifndef CLC_DATA_HPP_
#define CLC_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "clc/matrix.hpp"
#include "clc/rng.hpp"

namespace clc {

struct Dataset {
  Matrix features;          // N x D
  std::vector<int> labels;  // empty when unlabeled; values in [0, K_true)
  std::string name;

  bool has_labels() const { return !labels.empty(); }
  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  // 0 when unlabeled.
  std::size_t num_classes() const;
};

// Vector-space stand-ins for image augmentation: additive Gaussian noise,
// plus feature dropout and per-sample scale jitter in the strong variant.
struct AugmentationPolicy {
  enum class Kind { kWeak, kStrong };
  Kind kind = Kind::kWeak;
  double noise_sigma = 0.1;
  double dropout_rate = 0.0;   // strong only
  double scale_jitter = 0.0;   // strong only; factor drawn from 1 +/- jitter

  static AugmentationPolicy weak(double sigma) { return {Kind::kWeak, sigma, 0.0, 0.0}; }
  static AugmentationPolicy strong(double sigma) {
    return {Kind::kStrong, sigma, 0.2, 0.2};
  }
};

// K isotropic unit-variance Gaussians with means at separation * random unit
// directions; exactly per_cluster samples per class, labels attached.
Dataset gen_gaussian_mixture(std::size_t k, std::size_t per_cluster, std::size_t dim,
                             double separation, std::uint64_t seed);

// K concentric rings in the plane, radii 1..K, radial Gaussian noise.
Dataset gen_rings(std::size_t k, std::size_t per_ring, double noise, std::uint64_t seed);

// Numeric CSV ('.' decimal, no quoting); label column last when flagged.
// Ragged or non-numeric input raises ParseError naming the line.
Dataset load_csv(const std::filesystem::path& path, bool has_labels);
void save_csv(const std::filesystem::path& path, const Dataset& ds, bool with_labels);

// Sidecar metadata written next to generated CSVs.
void save_dataset_meta(const std::filesystem::path& csv_path, const Dataset& ds,
                       std::size_t k_true, std::uint64_t seed);

Matrix augment(const Matrix& x, const AugmentationPolicy& policy, Rng& rng);

// Two independent augmentations of the same rows; row order (and therefore
// label alignment) is never permuted.
std::pair<Matrix, Matrix> two_views(const Matrix& x, const AugmentationPolicy& policy, Rng& rng);

// Deterministic stratified split (train, holdout). Holdout gets
// round(fraction * class size) per class.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double holdout_fraction,
                                             Rng& rng);

}  // namespace clc

#endif  // CLC_DATA_HPP_
