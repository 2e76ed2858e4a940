#ifndef CLC_MATRIX_HPP_
#define CLC_MATRIX_HPP_

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <vector>

#include "clc/errors.hpp"

namespace clc {

// Dense row-major 2-D float64 array. The only numeric carrier in the library.
// Every operation validates shapes up front and guarantees finite output.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 0.0); }
  static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }
  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  // Bounds-checked access; throws ContractError.
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws NonFiniteError naming `op` if any entry of `m` is NaN or Inf.
void ensure_finite(const Matrix& m, const char* op);

// Core operations. All shape-checked; results are finite or they throw.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix add_scalar(const Matrix& a, double value);

// Rows rescaled to unit L2 norm. A zero-norm row throws DegenerateInputError.
Matrix row_l2_normalize(const Matrix& a);

// Row-wise softmax via max subtraction; rows sum to 1, never overflows.
Matrix softmax_rows(const Matrix& a);

// Row-wise log(sum(exp)); returns a rows x 1 column vector.
Matrix log_sum_exp_rows(const Matrix& a);

// Row-wise log-softmax; entries finite for any finite input.
Matrix log_softmax_rows(const Matrix& a);

double sum(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Binary serialization: magic "CLCM", u32 version, u64 rows, u64 cols,
// then row-major float64 payload. Everything little-endian.
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

}  // namespace clc

#endif  // CLC_MATRIX_HPP_
