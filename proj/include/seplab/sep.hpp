#pragma once

#include <string>
#include <vector>

#include "seplab/matrix.hpp"
#include "seplab/numerics.hpp"

namespace seplab::sep {

enum class Mode { kOff, kStructured, kContinuous };
enum class Activation { kTanh, kRelu, kIdentity };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);
Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// The learnable projection parameters plus their hyperparameters. P acts on
// embedding columns; alphas weight the context series; K is alphas.size().
struct ProjectionState {
  Matrix p;                    // d x d
  std::vector<double> alphas;  // K entries
  double lambda = 0.1;         // smoothness coefficient
  double mu = 0.1;             // dual-objective mixing weight
  Mode mode = Mode::kOff;
  Activation activation = Activation::kTanh;

  std::size_t dim() const { return p.rows(); }
  std::size_t depth() const { return alphas.size(); }
  void validate() const;  // throws std::invalid_argument on violation

  // Near-identity start: P = I + eps*N(0,1), alpha_k = 1/K.
  static ProjectionState init(std::size_t d, std::size_t k, double eps, Rng& rng);
};

// W_c = sum_{k=1..K} alpha_k (I + P^k / k!).
Matrix context_weighting(const ProjectionState& state);

// E' = P E + f(W_c E), f the elementwise activation.
Matrix project_structured(const Matrix& e, const ProjectionState& state);

// E' = phi1(P) E, the integral of exp(tP) E over t in [0,1].
Matrix project_continuous(const Matrix& e, const ProjectionState& state);

// Dispatch on state.mode; throws when mode is off.
Matrix sep_forward(const Matrix& e, const ProjectionState& state);

// J(P) = ||P E - M||_F^2 + lambda ||laplacian(P)||_F^2, M the column mean of
// E broadcast across columns.
double sep_objective(const ProjectionState& state, const Matrix& e);

// dJ/dP: 2 (P E - M) E^T plus lambda times the Laplacian-penalty adjoint.
Matrix sep_objective_grad(const ProjectionState& state, const Matrix& e);

// dJ/dE, the piece the dual-objective trainer propagates into the embedding
// tables: 2 P^T R - (2/n) (R 1) 1^T with R = P E - M.
Matrix sep_objective_grad_embeddings(const ProjectionState& state, const Matrix& e);

struct SepGradients {
  Matrix p;                    // dL/dP
  std::vector<double> alphas;  // dL/dalpha_k
  Matrix e;                    // dL/dE
};

// Forward cache for one projection application.
struct SepTape {
  Mode mode = Mode::kOff;
  Matrix input;                     // E
  std::vector<Matrix> powers;       // structured: P^0..P^K
  Matrix context;                   // structured: W_c
  Matrix preact;                    // structured: W_c E
  Phi1Tape phi;                     // continuous
  Matrix output;
};

Matrix sep_forward_cached(const Matrix& e, const ProjectionState& state, SepTape& tape);
SepGradients sep_backward(const SepTape& tape, const Matrix& upstream,
                          const ProjectionState& state);

// One-shot forward + reverse sweep of the mode's forward map.
SepGradients sep_forward_backward(const Matrix& e, const Matrix& upstream,
                                  const ProjectionState& state);

}  // namespace seplab::sep
