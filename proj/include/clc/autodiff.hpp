#ifndef CLC_AUTODIFF_HPP_
#define CLC_AUTODIFF_HPP_

#include <cstdint>
#include <functional>
#include <vector>

#include "clc/matrix.hpp"

namespace clc {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  std::size_t index() const { return index_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Reverse-mode tape. One tape per training step, single-threaded.
// Forward values are stored on the nodes; backward replays them in reverse
// topological order (which is just reverse insertion order).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. Constants never receive gradient; this is also the stop-gradient
  // marker: detach() re-enters any value as a constant.
  Var constant(Matrix value);
  Var leaf(Matrix value);
  Var detach(const Var& v) { return constant(v.value()); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
  Var scale(Var a, double factor);
  Var hadamard(Var a, Var b);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var softmax_rows(Var a);
  Var log_sum_exp_rows(Var a);
  Var row_l2_normalize(Var a);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, std::size_t col_begin, std::size_t col_end);
  Var sum_all(Var a);
  Var mean_all(Var a);
  // a: B x D plus a broadcast 1 x D row vector (bias add).
  Var add_row_broadcast(Var a, Var row);
  // out(i, 0) = a(i, i); requires cols >= rows. Positive-pair extraction.
  Var take_diag(Var a);

  // Accumulates gradients for every requires-grad node reachable from loss.
  // loss must be 1x1. One backward per tape.
  void backward(const Var& loss);

  bool has_grad(const Var& v) const;
  // Gradient of the last backward() w.r.t. v; zeros if v was unreachable.
  // Throws ContractError for constants.
  const Matrix& grad(const Var& v);

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  enum class Op : std::uint8_t {
    kConstant,
    kLeaf,
    kAdd,
    kScale,
    kHadamard,
    kMatmul,
    kTranspose,
    kExp,
    kLog,
    kTanh,
    kSoftmaxRows,
    kLogSumExpRows,
    kRowL2Normalize,
    kConcatCols,
    kSliceCols,
    kSumAll,
    kAddRowBroadcast,
    kTakeDiag,
  };

  struct Node {
    Op op;
    int a = -1;  // parent indices; -1 = none
    int b = -1;
    Matrix value;
    bool requires_grad = false;
    double factor = 0.0;       // kScale
    std::size_t col_begin = 0; // kSliceCols
    std::size_t col_end = 0;
  };

  Var push(Node node);
  void check_open(const char* op) const;
  void accumulate(int node_index, const Matrix& g);
  const Node& node_of(const Var& v) const;

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;  // parallel to nodes_; empty Matrix = not touched
  bool backward_done_ = false;
};

// Builds a scalar loss from a single matrix input on a fresh tape.
using TapeFn = std::function<Var(Tape&, Var)>;

// Evaluates f at x without tracking gradients.
double eval_scalar(const TapeFn& f, const Matrix& x);

// Central-difference check of the tape gradient of f at x.
// Returns the worst per-coordinate relative error, with the denominator
// floored at 1e-12. step must lie in (0, 1e-3].
double finite_diff_check(const TapeFn& f, const Matrix& x, double step);

}  // namespace clc

#endif  // CLC_AUTODIFF_HPP_
