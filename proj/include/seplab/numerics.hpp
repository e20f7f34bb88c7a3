#pragma once

#include <vector>

#include "seplab/kernels.hpp"
#include "seplab/matrix.hpp"

namespace seplab {

// Norm guard for the exponential-family kernels. The series itself converges
// for any matrix; the cap catches wildly scaled inputs early.
inline constexpr double kExpNormCap = 50.0;

// Cheap upper bound on the spectral norm: min(Frobenius, sqrt(norm1*normInf)).
double spectral_norm_bound(const Matrix& a);

// k-th matrix power, P^0 = I. Throws on non-square input.
Matrix mat_pow(const Matrix& p, std::size_t k);

// exp(P) via scaling-and-squaring with a truncated Taylor series. Terms are
// added until the next term's Frobenius norm drops below 1e-15 of the
// accumulated norm (hard cap 128 terms after scaling).
Matrix mat_exp(const Matrix& p, double norm_cap = kExpNormCap);

// phi1(P) = integral_0^1 exp(tP) dt = sum_j P^j/(j+1)!. Series form, defined
// for all square P including singular P. Doubling rule under squaring:
// phi1(2A) = (exp(A) + I) phi1(A) / 2.
Matrix phi1(const Matrix& p, double norm_cap = kExpNormCap);

// Forward tape for differentiating phi1 as executed (truncated series plus
// the squaring chain). Used by the continuous SEP backward pass.
struct Phi1Tape {
  int squarings = 0;
  std::vector<Matrix> series_terms;  // T_j = A^j / j!, j = 0..J
  std::vector<Matrix> exp_levels;    // exp at each squaring level, E_0..E_{s-1}
  std::vector<Matrix> phi_levels;    // phi1 at each squaring level
  Matrix exp_result;                 // exp(P), kept for reuse
  Matrix phi_result;                 // phi1(P)
};

Phi1Tape phi1_forward(const Matrix& p, double norm_cap = kExpNormCap);

// Reverse sweep: gradient of <upstream, phi1(P)> with respect to P.
Matrix phi1_backward(const Phi1Tape& tape, const Matrix& upstream);

// 5-point discrete Laplacian over the entries of P viewed as a 2-D grid,
// replicate padding at the edges. Linear in P; annihilates constants.
Matrix laplacian(const Matrix& p);

// Adjoint of `laplacian` under the Frobenius inner product: for any G,
// <laplacian(P), G> = <P, laplacian_adjoint(G)>.
Matrix laplacian_adjoint(const Matrix& g);

}  // namespace seplab
