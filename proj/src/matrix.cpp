#include "clc/matrix.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace clc {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged initializer list");
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

double& Matrix::at(std::size_t r, std::size_t c) {
  if (r >= rows_ || c >= cols_) throw ContractError("Matrix::at: index out of range");
  return data_[r * cols_ + c];
}

double Matrix::at(std::size_t r, std::size_t c) const {
  if (r >= rows_ || c >= cols_) throw ContractError("Matrix::at: index out of range");
  return data_[r * cols_ + c];
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void ensure_finite(const Matrix& m, const char* op) {
  if (!m.all_finite()) {
    throw NonFiniteError(std::string(op) + ": produced a non-finite value (" + shape_str(m) +
                         " result)");
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a) + " x " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  // i-k-j order: unit-stride inner loop over both b and out.
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = op + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = ap[i * k + kk];
      const double* brow = bp + kk * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  ensure_finite(out, "matmul");
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add: shapes differ, " + shape_str(a) + " vs " + shape_str(b));
  }
  Matrix out = a;
  double* o = out.data();
  const double* bp = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] += bp[i];
  ensure_finite(out, "add");
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("sub: shapes differ, " + shape_str(a) + " vs " + shape_str(b));
  }
  Matrix out = a;
  double* o = out.data();
  const double* bp = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] -= bp[i];
  ensure_finite(out, "sub");
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("hadamard: shapes differ, " + shape_str(a) + " vs " + shape_str(b));
  }
  Matrix out = a;
  double* o = out.data();
  const double* bp = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] *= bp[i];
  ensure_finite(out, "hadamard");
  return out;
}

Matrix scale(const Matrix& a, double factor) {
  Matrix out = a;
  double* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] *= factor;
  ensure_finite(out, "scale");
  return out;
}

Matrix add_scalar(const Matrix& a, double value) {
  Matrix out = a;
  double* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] += value;
  ensure_finite(out, "add_scalar");
  return out;
}

Matrix row_l2_normalize(const Matrix& a) {
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double ss = 0.0;
    for (double v : a.row(i)) ss += v * v;
    const double norm = std::sqrt(ss);
    if (norm == 0.0) {
      throw DegenerateInputError("row_l2_normalize: row " + std::to_string(i) +
                                 " has zero norm");
    }
    for (double& v : out.row(i)) v /= norm;
  }
  ensure_finite(out, "row_l2_normalize");
  return out;
}

Matrix softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : a.row(i)) mx = std::max(mx, v);
    double denom = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out(i, j) = std::exp(a(i, j) - mx);
      denom += out(i, j);
    }
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) /= denom;
  }
  ensure_finite(out, "softmax_rows");
  return out;
}

Matrix log_sum_exp_rows(const Matrix& a) {
  if (a.cols() == 0) throw ShapeError("log_sum_exp_rows: empty rows");
  Matrix out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : a.row(i)) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : a.row(i)) s += std::exp(v - mx);
    out(i, 0) = mx + std::log(s);
  }
  ensure_finite(out, "log_sum_exp_rows");
  return out;
}

Matrix log_softmax_rows(const Matrix& a) {
  const Matrix lse = log_sum_exp_rows(a);
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (double& v : out.row(i)) v -= lse(i, 0);
  }
  ensure_finite(out, "log_softmax_rows");
  return out;
}

double sum(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  return s;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: shapes differ, " + shape_str(a) + " vs " + shape_str(b));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

namespace {

constexpr char kMagic[4] = {'C', 'L', 'C', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("matrix read: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw IoError("matrix read: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  return std::bit_cast<double>(get_u64(in));
}

}  // namespace

void write_matrix(std::ostream& out, const Matrix& m) {
  out.write(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) put_f64(out, m.data()[i]);
  if (!out) throw IoError("matrix write failed");
}

Matrix read_matrix(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("matrix read: bad magic, expected CLCM");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kFormatVersion) {
    throw IoError("matrix read: unsupported format version " + std::to_string(version));
  }
  const std::uint64_t rows = get_u64(in);
  const std::uint64_t cols = get_u64(in);
  if (rows > 0 && cols > std::numeric_limits<std::size_t>::max() / rows) {
    throw IoError("matrix read: implausible dimensions");
  }
  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = get_f64(in);
  if (!in) throw IoError("matrix read: truncated payload");
  return m;
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_matrix(out, m);
}

Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return read_matrix(in);
}

}  // namespace clc
