#include "seplab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace seplab {

namespace {

constexpr double kSeriesRelTol = 1e-15;
constexpr int kSeriesMaxTerms = 128;

void require_square(const Matrix& p, const char* op) {
  if (p.rows() != p.cols()) {
    throw std::invalid_argument(std::string(op) + ": matrix must be square, got " +
                                p.shape_string());
  }
}

void check_norm_cap(const Matrix& p, double norm_cap, const char* op) {
  const double bound = spectral_norm_bound(p);
  if (bound > norm_cap) {
    throw std::domain_error(std::string(op) + ": spectral norm bound " + std::to_string(bound) +
                            " exceeds cap " + std::to_string(norm_cap) +
                            "; rescale the input (exp(P) = exp(P/2^s)^(2^s))");
  }
}

int scaling_steps(double bound) {
  int s = 0;
  while (bound > 1.0) {
    bound *= 0.5;
    ++s;
  }
  return s;
}

// Accumulates exp(A) and phi1(A) from the shared term sequence T_j = A^j/j!.
// Stops once the next term is negligible against the running exp sum.
void exp_phi1_series(const Matrix& a, Matrix& exp_out, Matrix& phi_out,
                     std::vector<Matrix>* terms) {
  const std::size_t n = a.rows();
  Matrix term = Matrix::identity(n);
  exp_out = term;
  phi_out = term;
  if (terms) {
    terms->clear();
    terms->push_back(term);
  }
  for (int j = 1; j <= kSeriesMaxTerms; ++j) {
    term = scale(mat_mul_serial(term, a), 1.0 / j);
    add_in_place(exp_out, term);
    axpy_in_place(phi_out, 1.0 / (j + 1), term);
    if (terms) terms->push_back(term);
    if (frobenius_norm(term) < kSeriesRelTol * frobenius_norm(exp_out)) break;
  }
}

}  // namespace

double spectral_norm_bound(const Matrix& a) {
  double norm1 = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) col += std::fabs(a(i, j));
    norm1 = std::max(norm1, col);
  }
  double norm_inf = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) row += std::fabs(a(i, j));
    norm_inf = std::max(norm_inf, row);
  }
  return std::min(frobenius_norm(a), std::sqrt(norm1 * norm_inf));
}

Matrix mat_pow(const Matrix& p, std::size_t k) {
  require_square(p, "mat_pow");
  Matrix out = Matrix::identity(p.rows());
  for (std::size_t i = 0; i < k; ++i) out = mat_mul(p, out);
  return out;
}

Matrix mat_exp(const Matrix& p, double norm_cap) {
  require_square(p, "mat_exp");
  check_norm_cap(p, norm_cap, "mat_exp");
  const int s = scaling_steps(spectral_norm_bound(p));
  const Matrix a = scale(p, std::ldexp(1.0, -s));
  Matrix e(p.rows(), p.cols());
  Matrix phi(p.rows(), p.cols());
  exp_phi1_series(a, e, phi, nullptr);
  for (int i = 0; i < s; ++i) e = mat_mul_serial(e, e);
  e.ensure_finite("mat_exp");
  return e;
}

Matrix phi1(const Matrix& p, double norm_cap) {
  return phi1_forward(p, norm_cap).phi_result;
}

Phi1Tape phi1_forward(const Matrix& p, double norm_cap) {
  require_square(p, "phi1");
  check_norm_cap(p, norm_cap, "phi1");
  Phi1Tape tape;
  tape.squarings = scaling_steps(spectral_norm_bound(p));
  const Matrix a = scale(p, std::ldexp(1.0, -tape.squarings));
  Matrix e(p.rows(), p.cols());
  Matrix phi(p.rows(), p.cols());
  exp_phi1_series(a, e, phi, &tape.series_terms);
  const Matrix eye = Matrix::identity(p.rows());
  for (int i = 0; i < tape.squarings; ++i) {
    tape.exp_levels.push_back(e);
    tape.phi_levels.push_back(phi);
    phi = scale(mat_mul_serial(add(e, eye), phi), 0.5);
    e = mat_mul_serial(e, e);
  }
  e.ensure_finite("phi1");
  phi.ensure_finite("phi1");
  tape.exp_result = std::move(e);
  tape.phi_result = std::move(phi);
  return tape;
}

Matrix phi1_backward(const Phi1Tape& tape, const Matrix& upstream) {
  if (!upstream.same_shape(tape.phi_result)) {
    throw std::invalid_argument("phi1_backward: upstream shape " + upstream.shape_string() +
                                " does not match phi1 output " + tape.phi_result.shape_string());
  }
  const std::size_t n = upstream.rows();
  const Matrix eye = Matrix::identity(n);
  Matrix d_phi = upstream;
  Matrix d_exp(n, n);
  // Unwind the squaring chain: phi_{k+1} = (E_k + I) phi_k / 2, E_{k+1} = E_k^2.
  for (int k = tape.squarings - 1; k >= 0; --k) {
    const Matrix& e_k = tape.exp_levels[static_cast<std::size_t>(k)];
    const Matrix& phi_k = tape.phi_levels[static_cast<std::size_t>(k)];
    const Matrix e_k_t = transpose(e_k);
    Matrix d_e = scale(mat_mul_serial(d_phi, transpose(phi_k)), 0.5);
    add_in_place(d_e, mat_mul_serial(d_exp, e_k_t));
    add_in_place(d_e, mat_mul_serial(e_k_t, d_exp));
    d_phi = scale(mat_mul_serial(transpose(add(e_k, eye)), d_phi), 0.5);
    d_exp = std::move(d_e);
  }
  // Unwind the shared series: T_j = T_{j-1} A / j feeds exp with weight 1 and
  // phi1 with weight 1/(j+1). terms[1] is A itself.
  const auto& terms = tape.series_terms;
  const Matrix a_t = transpose(terms[1]);
  Matrix d_a(n, n);
  Matrix carry(n, n);  // gradient flowing into T_j from T_{j+1}
  for (std::size_t j = terms.size() - 1; j >= 1; --j) {
    Matrix d_tj = add(d_exp, scale(d_phi, 1.0 / static_cast<double>(j + 1)));
    add_in_place(d_tj, carry);
    const double inv_j = 1.0 / static_cast<double>(j);
    add_in_place(d_a, scale(mat_mul_serial(transpose(terms[j - 1]), d_tj), inv_j));
    carry = scale(mat_mul_serial(d_tj, a_t), inv_j);
  }
  return scale(d_a, std::ldexp(1.0, -tape.squarings));
}

Matrix laplacian(const Matrix& p) {
  const std::size_t rows = p.rows();
  const std::size_t cols = p.cols();
  Matrix out(rows, cols);
  auto clamp = [](std::size_t idx, long long delta, std::size_t limit) {
    const long long v = static_cast<long long>(idx) + delta;
    if (v < 0) return static_cast<std::size_t>(0);
    if (v >= static_cast<long long>(limit)) return limit - 1;
    return static_cast<std::size_t>(v);
  };
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out(i, j) = p(clamp(i, +1, rows), j) + p(clamp(i, -1, rows), j) +
                  p(i, clamp(j, +1, cols)) + p(i, clamp(j, -1, cols)) - 4.0 * p(i, j);
    }
  }
  return out;
}

Matrix laplacian_adjoint(const Matrix& g) {
  const std::size_t rows = g.rows();
  const std::size_t cols = g.cols();
  Matrix out(rows, cols);
  auto clamp = [](std::size_t idx, long long delta, std::size_t limit) {
    const long long v = static_cast<long long>(idx) + delta;
    if (v < 0) return static_cast<std::size_t>(0);
    if (v >= static_cast<long long>(limit)) return limit - 1;
    return static_cast<std::size_t>(v);
  };
  // Scatter: each stencil read of P[ci,cj] in the forward contributes g[i,j]
  // to the gradient at [ci,cj].
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double gij = g(i, j);
      out(clamp(i, +1, rows), j) += gij;
      out(clamp(i, -1, rows), j) += gij;
      out(i, clamp(j, +1, cols)) += gij;
      out(i, clamp(j, -1, cols)) += gij;
      out(i, j) -= 4.0 * gij;
    }
  }
  return out;
}

}  // namespace seplab
