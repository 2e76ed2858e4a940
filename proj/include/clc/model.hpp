#ifndef CLC_MODEL_HPP_
#define CLC_MODEL_HPP_

#include <cstddef>
#include <deque>
#include <filesystem>
#include <utility>
#include <vector>

#include "clc/autodiff.hpp"
#include "clc/matrix.hpp"
#include "clc/rng.hpp"

namespace clc {

// MLP whose last layer is split into K cluster logits and C instance
// features. Hidden layers use tanh (smooth everywhere, so finite-difference
// checks are valid at any point).
struct MlpSpec {
  std::vector<std::size_t> layer_widths;  // input, hidden..., K + C
  std::size_t cluster_dim = 0;            // K
  std::size_t instance_dim = 0;           // C

  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t output_dim() const { return layer_widths.back(); }
  std::size_t layer_count() const { return layer_widths.size() - 1; }
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

struct Params {
  std::vector<Matrix> weights;  // in x out, per layer
  std::vector<Matrix> biases;   // 1 x out, per layer

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Params init(const MlpSpec& spec, Rng& rng);
  void check_shapes(const MlpSpec& spec) const;

  bool operator==(const Params&) const = default;
};

// The split representation: zc are cluster logits (B x K), zn instance
// features (B x C). Both row-normalized unless normalization was disabled
// for ablation; the concatenation then has squared norm 2, not 1.
struct Representation {
  Matrix zc;
  Matrix zn;
};

Representation forward(const MlpSpec& spec, const Params& params, const Matrix& x,
                       bool normalize_parts = true);

// Same forward recorded on a tape; weight/bias leaves exposed for the
// optimizer to read gradients from.
struct ForwardVars {
  Var zc;
  Var zn;
  std::vector<Var> weights;
  std::vector<Var> biases;
};

ForwardVars forward_node(Tape& tape, const MlpSpec& spec, const Params& params,
                         const Matrix& x, bool normalize_parts = true);

// Gradient-free EMA copy of the encoder (key encoder).
struct MomentumEncoder {
  Params params;
  double m = 0.99;  // key <- m * key + (1 - m) * query
};

void ema_update(MomentumEncoder& key, const Params& query);

// FIFO ring of past key representations used as extra negatives.
class NegativeQueue {
 public:
  NegativeQueue(std::size_t capacity, std::size_t cluster_dim, std::size_t instance_dim)
      : capacity_(capacity), cluster_dim_(cluster_dim), instance_dim_(instance_dim) {}

  void push(const Representation& keys);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }

  // Current contents as (n x K, n x C), oldest first. Callers push the
  // current batch only after its loss is computed, so these never contain
  // the step's own positives.
  std::pair<Matrix, Matrix> negatives() const;

 private:
  std::size_t capacity_;
  std::size_t cluster_dim_;
  std::size_t instance_dim_;
  std::deque<std::vector<double>> entries_;  // each K + C wide
};

// Encoder persistence: magic "CLCK", u32 version, spec, then weight/bias
// matrices in the CLCM matrix format. Round-trips bit-exactly.
void write_params(std::ostream& out, const MlpSpec& spec, const Params& params);
std::pair<MlpSpec, Params> read_params(std::istream& in);
void save_params(const std::filesystem::path& path, const MlpSpec& spec, const Params& params);
std::pair<MlpSpec, Params> load_params(const std::filesystem::path& path);

}  // namespace clc

#endif  // CLC_MODEL_HPP_
