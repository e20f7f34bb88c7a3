#pragma once

#include <cmath>
#include <functional>

#include "seplab/matrix.hpp"

namespace testutil {

using seplab::Matrix;

// Frobenius-relative distance against the reference value.
inline double rel_err(const Matrix& got, const Matrix& want) {
  const double denom = std::max(seplab::frobenius_norm(want), 1e-300);
  return seplab::frobenius_norm(seplab::sub(got, want)) / denom;
}

inline bool close(double a, double b, double rel, double abs) {
  return std::fabs(a - b) <= abs + rel * std::max(std::fabs(a), std::fabs(b));
}

// Independent triple-loop product, ijk order, no shared code with the library
// kernel.
inline Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

// Term-by-term Taylor exponential, no scaling. Adequate for small norms.
inline Matrix naive_exp_oracle(const Matrix& a, int terms = 60) {
  Matrix sum = Matrix::identity(a.rows());
  Matrix term = Matrix::identity(a.rows());
  for (int j = 1; j <= terms; ++j) {
    term = seplab::scale(matmul_oracle(term, a), 1.0 / j);
    seplab::add_in_place(sum, term);
  }
  return sum;
}

// Composite Simpson quadrature of exp(tP)E over t in [0,1] with `panels`
// subintervals (must be even). Node values are built by stepping with
// exp(hP), itself from the naive Taylor oracle.
inline Matrix simpson_exp_integral_oracle(const Matrix& p, const Matrix& e, int panels = 1000) {
  const double h = 1.0 / panels;
  const Matrix step = naive_exp_oracle(seplab::scale(p, h));
  Matrix node = e;  // exp(0 * P) E
  Matrix acc = e;   // Simpson weight 1 at t = 0
  for (int i = 1; i < panels; ++i) {
    node = matmul_oracle(step, node);
    seplab::axpy_in_place(acc, (i % 2 == 1) ? 4.0 : 2.0, node);
  }
  node = matmul_oracle(step, node);
  seplab::add_in_place(acc, node);
  return seplab::scale(acc, h / 3.0);
}

// Central finite difference of a scalar function with respect to every entry
// of the matrix behind `target`.
inline Matrix finite_difference(Matrix& target, const std::function<double()>& f,
                                double step = 1e-6) {
  Matrix grad(target.rows(), target.cols());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double saved = target.data()[i];
    target.data()[i] = saved + step;
    const double up = f();
    target.data()[i] = saved - step;
    const double down = f();
    target.data()[i] = saved;
    grad.data()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// Gradient check: every entry within rel of the FD value, with an absolute
// floor for near-zero entries.
inline bool grads_match(const Matrix& analytic, const Matrix& fd, double rel = 1e-4,
                        double abs = 1e-8) {
  if (!analytic.same_shape(fd)) return false;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!close(analytic.data()[i], fd.data()[i], rel, abs)) return false;
  }
  return true;
}

}  // namespace testutil
