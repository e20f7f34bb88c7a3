#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace seplab {

// Dense row-major matrix of 64-bit reals. The single numeric carrier for
// embeddings, projections, weights and gradients. Entries are kept finite:
// construction from data validates, and kernels re-validate their outputs.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix constant(std::size_t rows, std::size_t cols, double value);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  std::string shape_string() const;  // e.g. "3x4"
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  // Throws std::runtime_error naming `context` if any entry is NaN/Inf.
  void ensure_finite(const char* context) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Elementwise helpers. All require matching shapes and throw on mismatch.
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
void add_in_place(Matrix& a, const Matrix& b);         // a += b
void axpy_in_place(Matrix& a, double s, const Matrix& b);  // a += s*b

Matrix transpose(const Matrix& a);
double frobenius_norm(const Matrix& a);
double frobenius_dot(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& a);

// True when every entry has the same bit pattern (the determinism check).
bool bitwise_equal(const Matrix& a, const Matrix& b);

// Seeded RNG with fully pinned output: uniform doubles come from the top 53
// bits of mt19937_64 and normals from Box-Muller, so streams are identical
// across standard libraries (std::normal_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }
  double uniform();                        // [0, 1)
  double normal();                         // N(0, 1)
  std::size_t uniform_index(std::size_t bound);  // [0, bound), bound > 0

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);

}  // namespace seplab
