#include "seplab/sep.hpp"

#include <cmath>
#include <stdexcept>

namespace seplab::sep {

namespace {

void require_dim(const Matrix& e, const ProjectionState& state, const char* op) {
  if (e.rows() != state.dim()) {
    throw std::invalid_argument(std::string(op) + ": embedding rows " +
                                std::to_string(e.rows()) + " do not match projection dim " +
                                std::to_string(state.dim()));
  }
}

double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::kTanh: return std::tanh(z);
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kIdentity: return z;
  }
  return z;
}

double activation_derivative(Activation a, double z) {
  switch (a) {
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

// Column mean of E broadcast to E's shape.
Matrix column_mean_broadcast(const Matrix& e) {
  const std::size_t d = e.rows();
  const std::size_t n = e.cols();
  Matrix m(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += e(i, j);
    const double mean = s / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) m(i, j) = mean;
  }
  return m;
}

}  // namespace

Mode mode_from_string(const std::string& s) {
  if (s == "off") return Mode::kOff;
  if (s == "structured") return Mode::kStructured;
  if (s == "continuous") return Mode::kContinuous;
  throw std::invalid_argument("unknown sep mode '" + s + "' (expected off|structured|continuous)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kOff: return "off";
    case Mode::kStructured: return "structured";
    case Mode::kContinuous: return "continuous";
  }
  return "off";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation '" + s + "' (expected tanh|relu|identity)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "tanh";
}

void ProjectionState::validate() const {
  if (p.empty() || p.rows() != p.cols()) {
    throw std::invalid_argument("ProjectionState: P must be square and nonempty, got " +
                                p.shape_string());
  }
  if (alphas.empty()) {
    throw std::invalid_argument("ProjectionState: resolution depth K must be >= 1");
  }
  for (double a : alphas) {
    if (!std::isfinite(a)) throw std::invalid_argument("ProjectionState: non-finite alpha");
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("ProjectionState: lambda must be >= 0");
  if (!(mu >= 0.0)) throw std::invalid_argument("ProjectionState: mu must be >= 0");
  p.ensure_finite("ProjectionState::validate");
}

ProjectionState ProjectionState::init(std::size_t d, std::size_t k, double eps, Rng& rng) {
  ProjectionState state;
  state.p = add(Matrix::identity(d), random_normal(d, d, rng, eps));
  state.alphas.assign(k, 1.0 / static_cast<double>(k));
  return state;
}

Matrix context_weighting(const ProjectionState& state) {
  if (state.alphas.empty()) {
    throw std::invalid_argument("context_weighting: K = 0, the series is empty");
  }
  state.validate();
  const std::size_t d = state.dim();
  const Matrix eye = Matrix::identity(d);
  Matrix w(d, d);
  Matrix scaled_power = eye;  // P^k / k!, running
  for (std::size_t k = 1; k <= state.depth(); ++k) {
    scaled_power = scale(mat_mul(scaled_power, state.p), 1.0 / static_cast<double>(k));
    const double alpha = state.alphas[k - 1];
    axpy_in_place(w, alpha, eye);
    axpy_in_place(w, alpha, scaled_power);
  }
  return w;
}

Matrix project_structured(const Matrix& e, const ProjectionState& state) {
  SepTape tape;
  ProjectionState forced = state;
  forced.mode = Mode::kStructured;
  return sep_forward_cached(e, forced, tape);
}

Matrix project_continuous(const Matrix& e, const ProjectionState& state) {
  SepTape tape;
  ProjectionState forced = state;
  forced.mode = Mode::kContinuous;
  return sep_forward_cached(e, forced, tape);
}

Matrix sep_forward(const Matrix& e, const ProjectionState& state) {
  SepTape tape;
  return sep_forward_cached(e, state, tape);
}

double sep_objective(const ProjectionState& state, const Matrix& e) {
  state.validate();
  require_dim(e, state, "sep_objective");
  if (e.cols() == 0 || e.empty()) {
    throw std::invalid_argument("sep_objective: E has no columns, mean undefined");
  }
  const Matrix residual = sub(mat_mul(state.p, e), column_mean_broadcast(e));
  const double data_term = frobenius_dot(residual, residual);
  const Matrix lap = laplacian(state.p);
  return data_term + state.lambda * frobenius_dot(lap, lap);
}

Matrix sep_objective_grad(const ProjectionState& state, const Matrix& e) {
  state.validate();
  require_dim(e, state, "sep_objective_grad");
  if (e.cols() == 0 || e.empty()) {
    throw std::invalid_argument("sep_objective_grad: E has no columns, mean undefined");
  }
  const Matrix residual = sub(mat_mul(state.p, e), column_mean_broadcast(e));
  Matrix grad = scale(mat_mul(residual, transpose(e)), 2.0);
  if (state.lambda != 0.0) {
    axpy_in_place(grad, 2.0 * state.lambda, laplacian_adjoint(laplacian(state.p)));
  }
  return grad;
}

Matrix sep_objective_grad_embeddings(const ProjectionState& state, const Matrix& e) {
  state.validate();
  require_dim(e, state, "sep_objective_grad_embeddings");
  if (e.cols() == 0 || e.empty()) {
    throw std::invalid_argument("sep_objective_grad_embeddings: E has no columns");
  }
  const std::size_t n = e.cols();
  const Matrix residual = sub(mat_mul(state.p, e), column_mean_broadcast(e));
  Matrix grad = scale(mat_mul(transpose(state.p), residual), 2.0);
  // The column mean depends on every column: subtract (2/n) * rowsum(R).
  for (std::size_t i = 0; i < grad.rows(); ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) row_sum += residual(i, j);
    const double shift = 2.0 * row_sum / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) grad(i, j) -= shift;
  }
  return grad;
}

Matrix sep_forward_cached(const Matrix& e, const ProjectionState& state, SepTape& tape) {
  state.validate();
  require_dim(e, state, "sep_forward");
  tape = SepTape{};
  tape.mode = state.mode;
  tape.input = e;
  switch (state.mode) {
    case Mode::kOff:
      throw std::invalid_argument("sep_forward: mode is off, nothing to apply");
    case Mode::kStructured: {
      const std::size_t d = state.dim();
      tape.powers.reserve(state.depth() + 1);
      tape.powers.push_back(Matrix::identity(d));
      for (std::size_t k = 1; k <= state.depth(); ++k) {
        tape.powers.push_back(mat_mul(tape.powers.back(), state.p));
      }
      tape.context = context_weighting(state);
      tape.preact = mat_mul(tape.context, e);
      Matrix activated = tape.preact;
      for (std::size_t i = 0; i < activated.size(); ++i) {
        activated.data()[i] = apply_activation(state.activation, activated.data()[i]);
      }
      tape.output = add(mat_mul(state.p, e), activated);
      break;
    }
    case Mode::kContinuous: {
      tape.phi = phi1_forward(state.p);
      tape.output = mat_mul(tape.phi.phi_result, e);
      break;
    }
  }
  tape.output.ensure_finite("sep_forward");
  return tape.output;
}

SepGradients sep_backward(const SepTape& tape, const Matrix& upstream,
                          const ProjectionState& state) {
  if (!upstream.same_shape(tape.output)) {
    throw std::invalid_argument("sep_backward: upstream shape " + upstream.shape_string() +
                                " does not match output " + tape.output.shape_string());
  }
  SepGradients grads;
  grads.alphas.assign(state.depth(), 0.0);
  const Matrix& e = tape.input;
  switch (tape.mode) {
    case Mode::kOff:
      throw std::invalid_argument("sep_backward: mode is off, no parameters to differentiate");
    case Mode::kStructured: {
      Matrix gated = upstream;  // upstream ⊙ f'(Z)
      for (std::size_t i = 0; i < gated.size(); ++i) {
        gated.data()[i] *= activation_derivative(state.activation, tape.preact.data()[i]);
      }
      grads.e = add(mat_mul(transpose(state.p), upstream),
                    mat_mul(transpose(tape.context), gated));
      const Matrix d_context = mat_mul(gated, transpose(e));
      grads.p = mat_mul(upstream, transpose(e));
      const Matrix eye = Matrix::identity(state.dim());
      double factorial = 1.0;
      for (std::size_t k = 1; k <= state.depth(); ++k) {
        factorial *= static_cast<double>(k);
        grads.alphas[k - 1] = frobenius_dot(eye, d_context) +
                              frobenius_dot(tape.powers[k], d_context) / factorial;
        // d(P^k) with upstream S: sum_i (P^i)^T S (P^{k-1-i})^T.
        const double weight = state.alphas[k - 1] / factorial;
        if (weight != 0.0) {
          for (std::size_t i = 0; i < k; ++i) {
            const Matrix left = transpose(tape.powers[i]);
            const Matrix right = transpose(tape.powers[k - 1 - i]);
            axpy_in_place(grads.p, weight, mat_mul(mat_mul(left, d_context), right));
          }
        }
      }
      break;
    }
    case Mode::kContinuous: {
      grads.e = mat_mul(transpose(tape.phi.phi_result), upstream);
      grads.p = phi1_backward(tape.phi, mat_mul(upstream, transpose(e)));
      break;
    }
  }
  return grads;
}

SepGradients sep_forward_backward(const Matrix& e, const Matrix& upstream,
                                  const ProjectionState& state) {
  SepTape tape;
  sep_forward_cached(e, state, tape);
  return sep_backward(tape, upstream, state);
}

}  // namespace seplab::sep
