#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "clc/matrix.hpp"
#include "clc/rng.hpp"

using namespace clc;

namespace {

// Independent oracle: plain triple loop, accumulation order differs from the
// production kernel.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("matrix");

TEST_CASE("matmul identity and hand arithmetic") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(max_abs_diff(matmul(Matrix::identity(2), a), a) == 0.0);

  const Matrix v = Matrix::from_rows({{0}, {1}});
  const Matrix got = matmul(a, v);
  CHECK(got(0, 0) == doctest::Approx(2.0).epsilon(0));
  CHECK(got(1, 0) == doctest::Approx(4.0).epsilon(0));
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  const Matrix a = random_uniform(rng, 5, 4, -2.0, 2.0);
  const Matrix b = random_uniform(rng, 4, 3, -2.0, 2.0);
  CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("matmul associativity on random triples") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_uniform(rng, 4, 6, -1.0, 1.0);
    const Matrix b = random_uniform(rng, 6, 5, -1.0, 1.0);
    const Matrix c = random_uniform(rng, 5, 3, -1.0, 1.0);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    CHECK(max_abs_diff(left, right) / (1.0 + max_abs(left)) < 1e-10);
  }
}

TEST_CASE("row_l2_normalize 3-4-5 triangle") {
  const Matrix got = row_l2_normalize(Matrix::from_rows({{3, 4}}));
  CHECK(got(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(got(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("row_l2_normalize is idempotent") {
  Rng rng(3);
  const Matrix a = random_uniform(rng, 6, 5, -1.0, 1.0);
  const Matrix once = row_l2_normalize(a);
  CHECK(max_abs_diff(row_l2_normalize(once), once) < 1e-15);
  for (std::size_t i = 0; i < once.rows(); ++i) {
    double ss = 0.0;
    for (double v : once.row(i)) ss += v * v;
    CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-12);
  }
}

TEST_CASE("row_l2_normalize rejects a zero row") {
  CHECK_THROWS_AS(row_l2_normalize(Matrix::from_rows({{0, 0}})), DegenerateInputError);
}

TEST_CASE("softmax_rows uniform logits") {
  const Matrix got = softmax_rows(Matrix::from_rows({{0, 0, 0}}));
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(got(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
}

TEST_CASE("softmax_rows survives huge logits") {
  const Matrix got = softmax_rows(Matrix::from_rows({{1000, 1000}}));
  CHECK(got(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(got(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax_rows closed form for [1,2]") {
  const Matrix got = softmax_rows(Matrix::from_rows({{1, 2}}));
  const double e = std::exp(1.0);
  CHECK(std::abs(got(0, 0) - 1.0 / (1.0 + e)) < 1e-15);
  CHECK(std::abs(got(0, 1) - e / (1.0 + e)) < 1e-15);
}

TEST_CASE("softmax_rows shift invariance and row sums") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_uniform(rng, 4, 5, -3.0, 3.0);
    const double c = rng.uniform(-50.0, 50.0);
    const Matrix shifted = add_scalar(a, c);
    CHECK(max_abs_diff(softmax_rows(a), softmax_rows(shifted)) < 1e-12);
    const Matrix p = softmax_rows(a);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (double v : p.row(i)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("log_sum_exp_rows basics") {
  CHECK(log_sum_exp_rows(Matrix::from_rows({{0, 0}}))(0, 0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(log_sum_exp_rows(Matrix::from_rows({{-3.25}}))(0, 0) == -3.25);
  // Shifted direct sum as the oracle: 700 + log(e^0 + e^0).
  CHECK(std::abs(log_sum_exp_rows(Matrix::from_rows({{700, 700}}))(0, 0) -
                 (700.0 + std::log(2.0))) < 1e-12);
}

TEST_CASE("non-finite results are rejected") {
  const Matrix a = Matrix::from_rows({{1e308, 1e308}});
  CHECK_THROWS_AS(scale(a, 10.0), NonFiniteError);
  CHECK_THROWS_AS(add(a, a), NonFiniteError);
}

TEST_CASE("serialization round-trips bit-exactly") {
  Rng rng(19);
  const Matrix a = random_normal(rng, 7, 3);
  const auto path = std::filesystem::temp_directory_path() / "clc_matrix_rt.clcm";
  save_matrix(path, a);
  const Matrix b = load_matrix(path);
  CHECK(a == b);

  // Second save produces identical bytes.
  const auto path2 = std::filesystem::temp_directory_path() / "clc_matrix_rt2.clcm";
  save_matrix(path2, b);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("serialization rejects corrupt input") {
  std::istringstream bad_magic("XXXX????????????????");
  CHECK_THROWS_AS(read_matrix(bad_magic), IoError);
  std::ostringstream buf;
  write_matrix(buf, Matrix::from_rows({{1, 2}, {3, 4}}));
  const std::string full = buf.str();
  std::istringstream truncated(full.substr(0, full.size() - 5));
  CHECK_THROWS_AS(read_matrix(truncated), IoError);
}

TEST_CASE("rng: identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(42), d(43);
  CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("rng: state round-trips mid-stream") {
  Rng a(9);
  for (int i = 0; i < 37; ++i) a.normal();
  const std::string saved = a.state();
  Rng b(0);
  b.set_state(saved);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform() == b.uniform());
  }
}

TEST_CASE("rng: uniform_index stays in range and shuffle is deterministic") {
  Rng a(123);
  for (int i = 0; i < 200; ++i) {
    CHECK(a.uniform_index(7) < 7);
  }
  std::vector<int> v1{1, 2, 3, 4, 5, 6}, v2{1, 2, 3, 4, 5, 6};
  Rng r1(5), r2(5);
  r1.shuffle(v1);
  r2.shuffle(v2);
  CHECK(v1 == v2);
}

TEST_SUITE_END();
