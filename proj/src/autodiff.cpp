#include "clc/autodiff.hpp"

#include <cmath>
#include <string>

namespace clc {

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw ContractError("Var: default-constructed handle");
  return tape_->node_of(*this).value;
}

bool Var::requires_grad() const {
  if (tape_ == nullptr) throw ContractError("Var: default-constructed handle");
  return tape_->node_of(*this).requires_grad;
}

const Tape::Node& Tape::node_of(const Var& v) const {
  if (v.tape_ != this || v.index_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape");
  }
  return nodes_[v.index_];
}

void Tape::check_open(const char* op) const {
  if (backward_done_) {
    throw ContractError(std::string(op) +
                        ": tape already ran backward; clear() before reuse");
  }
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  check_open("constant");
  ensure_finite(value, "tape constant");
  return push({.op = Op::kConstant, .value = std::move(value), .requires_grad = false});
}

Var Tape::leaf(Matrix value) {
  check_open("leaf");
  ensure_finite(value, "tape leaf");
  return push({.op = Op::kLeaf, .value = std::move(value), .requires_grad = true});
}

namespace {

int idx(const Var& v) { return static_cast<int>(v.index()); }

}  // namespace

Var Tape::add(Var a, Var b) {
  check_open("add");
  Matrix v = clc::add(a.value(), b.value());
  return push({.op = Op::kAdd, .a = idx(a), .b = idx(b), .value = std::move(v),
               .requires_grad = a.requires_grad() || b.requires_grad()});
}

Var Tape::scale(Var a, double factor) {
  check_open("scale");
  Matrix v = clc::scale(a.value(), factor);
  return push({.op = Op::kScale, .a = idx(a), .value = std::move(v),
               .requires_grad = a.requires_grad(), .factor = factor});
}

Var Tape::hadamard(Var a, Var b) {
  check_open("hadamard");
  Matrix v = clc::hadamard(a.value(), b.value());
  return push({.op = Op::kHadamard, .a = idx(a), .b = idx(b), .value = std::move(v),
               .requires_grad = a.requires_grad() || b.requires_grad()});
}

Var Tape::matmul(Var a, Var b) {
  check_open("matmul");
  Matrix v = clc::matmul(a.value(), b.value());
  return push({.op = Op::kMatmul, .a = idx(a), .b = idx(b), .value = std::move(v),
               .requires_grad = a.requires_grad() || b.requires_grad()});
}

Var Tape::transpose(Var a) {
  check_open("transpose");
  return push({.op = Op::kTranspose, .a = idx(a), .value = clc::transpose(a.value()),
               .requires_grad = a.requires_grad()});
}

Var Tape::exp(Var a) {
  check_open("exp");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = std::exp(v.data()[i]);
  ensure_finite(v, "tape exp");
  return push({.op = Op::kExp, .a = idx(a), .value = std::move(v),
               .requires_grad = a.requires_grad()});
}

Var Tape::log(Var a) {
  check_open("log");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = std::log(v.data()[i]);
  ensure_finite(v, "tape log");
  return push({.op = Op::kLog, .a = idx(a), .value = std::move(v),
               .requires_grad = a.requires_grad()});
}

Var Tape::tanh(Var a) {
  check_open("tanh");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = std::tanh(v.data()[i]);
  return push({.op = Op::kTanh, .a = idx(a), .value = std::move(v),
               .requires_grad = a.requires_grad()});
}

Var Tape::softmax_rows(Var a) {
  check_open("softmax_rows");
  return push({.op = Op::kSoftmaxRows, .a = idx(a), .value = clc::softmax_rows(a.value()),
               .requires_grad = a.requires_grad()});
}

Var Tape::log_sum_exp_rows(Var a) {
  check_open("log_sum_exp_rows");
  return push({.op = Op::kLogSumExpRows, .a = idx(a),
               .value = clc::log_sum_exp_rows(a.value()),
               .requires_grad = a.requires_grad()});
}

Var Tape::row_l2_normalize(Var a) {
  check_open("row_l2_normalize");
  return push({.op = Op::kRowL2Normalize, .a = idx(a),
               .value = clc::row_l2_normalize(a.value()),
               .requires_grad = a.requires_grad()});
}

Var Tape::concat_cols(Var a, Var b) {
  check_open("concat_cols");
  const Matrix& ma = a.value();
  const Matrix& mb = b.value();
  if (ma.rows() != mb.rows()) throw ShapeError("concat_cols: row counts differ");
  Matrix v(ma.rows(), ma.cols() + mb.cols());
  for (std::size_t i = 0; i < ma.rows(); ++i) {
    for (std::size_t j = 0; j < ma.cols(); ++j) v(i, j) = ma(i, j);
    for (std::size_t j = 0; j < mb.cols(); ++j) v(i, ma.cols() + j) = mb(i, j);
  }
  return push({.op = Op::kConcatCols, .a = idx(a), .b = idx(b), .value = std::move(v),
               .requires_grad = a.requires_grad() || b.requires_grad()});
}

Var Tape::slice_cols(Var a, std::size_t col_begin, std::size_t col_end) {
  check_open("slice_cols");
  const Matrix& m = a.value();
  if (col_begin >= col_end || col_end > m.cols()) {
    throw ShapeError("slice_cols: bad column range");
  }
  Matrix v(m.rows(), col_end - col_begin);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = col_begin; j < col_end; ++j) v(i, j - col_begin) = m(i, j);
  }
  return push({.op = Op::kSliceCols, .a = idx(a), .value = std::move(v),
               .requires_grad = a.requires_grad(), .col_begin = col_begin,
               .col_end = col_end});
}

Var Tape::sum_all(Var a) {
  check_open("sum_all");
  Matrix v(1, 1);
  v(0, 0) = clc::sum(a.value());
  ensure_finite(v, "tape sum_all");
  return push({.op = Op::kSumAll, .a = idx(a), .value = std::move(v),
               .requires_grad = a.requires_grad()});
}

Var Tape::mean_all(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean_all: empty matrix");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var Tape::add_row_broadcast(Var a, Var row) {
  check_open("add_row_broadcast");
  const Matrix& ma = a.value();
  const Matrix& mr = row.value();
  if (mr.rows() != 1 || mr.cols() != ma.cols()) {
    throw ShapeError("add_row_broadcast: row vector must be 1 x cols(a)");
  }
  Matrix v = ma;
  for (std::size_t i = 0; i < v.rows(); ++i) {
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += mr(0, j);
  }
  ensure_finite(v, "add_row_broadcast");
  return push({.op = Op::kAddRowBroadcast, .a = idx(a), .b = idx(row),
               .value = std::move(v),
               .requires_grad = a.requires_grad() || row.requires_grad()});
}

Var Tape::take_diag(Var a) {
  check_open("take_diag");
  const Matrix& m = a.value();
  if (m.cols() < m.rows()) throw ShapeError("take_diag: needs cols >= rows");
  Matrix v(m.rows(), 1);
  for (std::size_t i = 0; i < m.rows(); ++i) v(i, 0) = m(i, i);
  return push({.op = Op::kTakeDiag, .a = idx(a), .value = std::move(v),
               .requires_grad = a.requires_grad()});
}

void Tape::accumulate(int node_index, const Matrix& g) {
  Matrix& slot = grads_[node_index];
  if (slot.empty()) {
    slot = g;
  } else {
    slot = clc::add(slot, g);
  }
}

void Tape::backward(const Var& loss) {
  const Node& top = node_of(loss);
  if (top.value.rows() != 1 || top.value.cols() != 1) {
    throw ContractError("backward: loss must be a 1x1 scalar");
  }
  if (backward_done_) throw ContractError("backward: already run on this tape");
  if (!top.requires_grad) {
    // Loss does not depend on any leaf; nothing to do.
    backward_done_ = true;
    grads_.assign(nodes_.size(), Matrix());
    return;
  }
  grads_.assign(nodes_.size(), Matrix());
  grads_[loss.index()] = Matrix::ones(1, 1);

  for (std::size_t n = loss.index() + 1; n-- > 0;) {
    const Node& node = nodes_[n];
    if (!node.requires_grad || grads_[n].empty()) continue;
    const Matrix g = grads_[n];  // copy: accumulate() may grow the vector's slots
    const bool need_a = node.a >= 0 && nodes_[node.a].requires_grad;
    const bool need_b = node.b >= 0 && nodes_[node.b].requires_grad;

    switch (node.op) {
      case Op::kConstant:
      case Op::kLeaf:
        break;
      case Op::kAdd:
        if (need_a) accumulate(node.a, g);
        if (need_b) accumulate(node.b, g);
        break;
      case Op::kScale:
        if (need_a) accumulate(node.a, clc::scale(g, node.factor));
        break;
      case Op::kHadamard:
        if (need_a) accumulate(node.a, clc::hadamard(g, nodes_[node.b].value));
        if (need_b) accumulate(node.b, clc::hadamard(g, nodes_[node.a].value));
        break;
      case Op::kMatmul:
        if (need_a) accumulate(node.a, clc::matmul(g, clc::transpose(nodes_[node.b].value)));
        if (need_b) accumulate(node.b, clc::matmul(clc::transpose(nodes_[node.a].value), g));
        break;
      case Op::kTranspose:
        if (need_a) accumulate(node.a, clc::transpose(g));
        break;
      case Op::kExp:
        if (need_a) accumulate(node.a, clc::hadamard(g, node.value));
        break;
      case Op::kLog: {
        if (!need_a) break;
        const Matrix& x = nodes_[node.a].value;
        Matrix dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] /= x.data()[i];
        ensure_finite(dx, "backward log");
        accumulate(node.a, dx);
        break;
      }
      case Op::kTanh: {
        if (!need_a) break;
        Matrix dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double y = node.value.data()[i];
          dx.data()[i] *= 1.0 - y * y;
        }
        accumulate(node.a, dx);
        break;
      }
      case Op::kSoftmaxRows: {
        // dx_j = y_j * (g_j - sum_k g_k y_k), per row.
        if (!need_a) break;
        const Matrix& y = node.value;
        Matrix dx(y.rows(), y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (g(i, j) - dot);
        }
        accumulate(node.a, dx);
        break;
      }
      case Op::kLogSumExpRows: {
        // dx = softmax(x) scaled per row by the incoming scalar.
        if (!need_a) break;
        Matrix dx = clc::softmax_rows(nodes_[node.a].value);
        for (std::size_t i = 0; i < dx.rows(); ++i) {
          for (std::size_t j = 0; j < dx.cols(); ++j) dx(i, j) *= g(i, 0);
        }
        accumulate(node.a, dx);
        break;
      }
      case Op::kRowL2Normalize: {
        // dx = (g - (g . y) y) / ||x||: projection orthogonal to y.
        if (!need_a) break;
        const Matrix& x = nodes_[node.a].value;
        const Matrix& y = node.value;
        Matrix dx(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          double ss = 0.0;
          for (double v : x.row(i)) ss += v * v;
          const double norm = std::sqrt(ss);
          double dot = 0.0;
          for (std::size_t j = 0; j < x.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < x.cols(); ++j) {
            dx(i, j) = (g(i, j) - dot * y(i, j)) / norm;
          }
        }
        accumulate(node.a, dx);
        break;
      }
      case Op::kConcatCols: {
        const Matrix& ma = nodes_[node.a].value;
        if (need_a) {
          Matrix da(ma.rows(), ma.cols());
          for (std::size_t i = 0; i < ma.rows(); ++i) {
            for (std::size_t j = 0; j < ma.cols(); ++j) da(i, j) = g(i, j);
          }
          accumulate(node.a, da);
        }
        if (need_b) {
          const Matrix& mb = nodes_[node.b].value;
          Matrix db(mb.rows(), mb.cols());
          for (std::size_t i = 0; i < mb.rows(); ++i) {
            for (std::size_t j = 0; j < mb.cols(); ++j) db(i, j) = g(i, ma.cols() + j);
          }
          accumulate(node.b, db);
        }
        break;
      }
      case Op::kSliceCols: {
        if (!need_a) break;
        const Matrix& x = nodes_[node.a].value;
        Matrix dx(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          for (std::size_t j = node.col_begin; j < node.col_end; ++j) {
            dx(i, j) = g(i, j - node.col_begin);
          }
        }
        accumulate(node.a, dx);
        break;
      }
      case Op::kSumAll: {
        if (!need_a) break;
        const Matrix& x = nodes_[node.a].value;
        accumulate(node.a, Matrix(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case Op::kAddRowBroadcast: {
        if (need_a) accumulate(node.a, g);
        if (need_b) {
          Matrix dr(1, g.cols());
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) dr(0, j) += g(i, j);
          }
          accumulate(node.b, dr);
        }
        break;
      }
      case Op::kTakeDiag: {
        if (!need_a) break;
        const Matrix& x = nodes_[node.a].value;
        Matrix dx(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) dx(i, i) = g(i, 0);
        accumulate(node.a, dx);
        break;
      }
    }
  }
  backward_done_ = true;
}

bool Tape::has_grad(const Var& v) const {
  const Node& n = node_of(v);
  return n.requires_grad && backward_done_;
}

const Matrix& Tape::grad(const Var& v) {
  const Node& n = node_of(v);
  if (!n.requires_grad) {
    throw ContractError("grad: node does not require gradient");
  }
  if (!backward_done_) throw ContractError("grad: backward has not run");
  Matrix& slot = grads_[v.index()];
  if (slot.empty()) slot = Matrix::zeros(n.value.rows(), n.value.cols());
  return slot;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  backward_done_ = false;
}

double eval_scalar(const TapeFn& f, const Matrix& x) {
  Tape tape;
  Var out = f(tape, tape.constant(x));
  const Matrix& v = out.value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("eval_scalar: function did not produce a 1x1 value");
  }
  return v(0, 0);
}

double finite_diff_check(const TapeFn& f, const Matrix& x, double step) {
  if (!(step > 0.0) || step > 1e-3) {
    throw ContractError("finite_diff_check: step must lie in (0, 1e-3]");
  }
  Tape tape;
  Var vx = tape.leaf(x);
  Var loss = f(tape, vx);
  if (loss.value().rows() != 1 || loss.value().cols() != 1) {
    throw ContractError("finite_diff_check: f must produce a 1x1 value");
  }
  tape.backward(loss);
  const Matrix analytic = tape.grad(vx);

  double worst = 0.0;
  Matrix probe = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double orig = probe(i, j);
      probe(i, j) = orig + step;
      const double up = eval_scalar(f, probe);
      probe(i, j) = orig - step;
      const double down = eval_scalar(f, probe);
      probe(i, j) = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError("finite_diff_check: f evaluated to a non-finite value");
      }
      const double estimate = (up - down) / (2.0 * step);
      const double got = analytic(i, j);
      const double denom = std::max({std::abs(estimate), std::abs(got), 1e-12});
      worst = std::max(worst, std::abs(estimate - got) / denom);
    }
  }
  return worst;
}

}  // namespace clc
