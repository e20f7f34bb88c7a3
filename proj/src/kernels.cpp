#include "seplab/kernels.hpp"

#include <atomic>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace seplab {

namespace {

std::atomic<int> g_kernel_threads{1};

void require_compatible(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("mat_mul: dimension mismatch (a is " + a.shape_string() +
                                ", b is " + b.shape_string() + ")");
  }
}

// Shared inner kernel: fills output rows [row_begin, row_end). ikj order for
// locality; for each (i,j) the k-contributions still arrive in ascending k,
// which pins the summation order.
void mul_rows(const Matrix& a, const Matrix& b, Matrix& out, std::size_t row_begin,
              std::size_t row_end) {
  const std::size_t n = b.cols();
  const std::size_t kk = a.cols();
  for (std::size_t i = row_begin; i < row_end; ++i) {
    double* out_row = out.row(i);
    for (std::size_t k = 0; k < kk; ++k) {
      const double aik = a(i, k);
      const double* b_row = b.row(k);
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
}

}  // namespace

void set_kernel_threads(int n) {
  g_kernel_threads.store(n < 1 ? 1 : n);
}

int kernel_threads() { return g_kernel_threads.load(); }

Matrix mat_mul_serial(const Matrix& a, const Matrix& b) {
  require_compatible(a, b);
  Matrix out(a.rows(), b.cols());
  mul_rows(a, b, out, 0, a.rows());
  out.ensure_finite("mat_mul");
  return out;
}

Matrix mat_mul_parallel(const Matrix& a, const Matrix& b, int threads) {
  require_compatible(a, b);
  Matrix out(a.rows(), b.cols());
#ifdef _OPENMP
  const auto rows = static_cast<long long>(a.rows());
#pragma omp parallel for schedule(static) num_threads(threads)
  for (long long i = 0; i < rows; ++i) {
    mul_rows(a, b, out, static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1);
  }
#else
  (void)threads;
  mul_rows(a, b, out, 0, a.rows());
#endif
  out.ensure_finite("mat_mul");
  return out;
}

Matrix mat_mul(const Matrix& a, const Matrix& b) {
  const int threads = kernel_threads();
  if (threads > 1) return mat_mul_parallel(a, b, threads);
  return mat_mul_serial(a, b);
}

}  // namespace seplab
