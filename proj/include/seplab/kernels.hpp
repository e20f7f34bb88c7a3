#pragma once

#include "seplab/matrix.hpp"

namespace seplab {

// Number of threads the dispatching mat_mul may use. 1 (the default) routes
// every product through the serial reference kernel; values > 1 enable the
// OpenMP row-partitioned kernel. Both kernels accumulate each output entry
// left-to-right over k, so their results are bitwise equal.
void set_kernel_threads(int n);
int kernel_threads();

// Serial reference product. Fixed left-to-right accumulation per entry.
Matrix mat_mul_serial(const Matrix& a, const Matrix& b);

// OpenMP product, rows of the output partitioned across threads. Each entry
// is produced by exactly one thread with the serial accumulation order.
Matrix mat_mul_parallel(const Matrix& a, const Matrix& b, int threads);

// Dispatches on kernel_threads().
Matrix mat_mul(const Matrix& a, const Matrix& b);

}  // namespace seplab
