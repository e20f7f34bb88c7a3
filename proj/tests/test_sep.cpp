#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "seplab/sep.hpp"
#include "test_util.hpp"

using namespace seplab;
using namespace seplab::sep;
using testutil::rel_err;

namespace {

ProjectionState make_state(std::size_t d, std::size_t k, Mode mode, Activation act,
                           double lambda = 0.0, std::uint64_t seed = 1) {
  Rng rng(seed);
  ProjectionState s = ProjectionState::init(d, k, 0.01, rng);
  s.mode = mode;
  s.activation = act;
  s.lambda = lambda;
  return s;
}

// Solves the 3x3 (or general small) system A x = b by Gaussian elimination
// with partial pivoting. Test-side oracle only.
std::vector<double> solve_small(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
    }
    for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
    x[i] = s / a(i, i);
  }
  return x;
}

}  // namespace

TEST_CASE("context_weighting trivial cases") {
  auto s = make_state(3, 2, Mode::kStructured, Activation::kTanh);
  s.alphas = {0.0, 0.0};
  CHECK(frobenius_norm(context_weighting(s)) == 0.0);

  auto s2 = make_state(3, 1, Mode::kStructured, Activation::kTanh);
  s2.p = Matrix(3, 3);  // zero
  s2.alphas = {1.0};
  CHECK(rel_err(context_weighting(s2), Matrix::identity(3)) == 0.0);
}

TEST_CASE("context_weighting term-by-term oracle") {
  auto s = make_state(4, 2, Mode::kStructured, Activation::kTanh);
  s.p = Matrix::identity(4);
  s.alphas = {1.0, 0.5};
  const Matrix w = context_weighting(s);
  // 1*(I + I) + 0.5*(I + I/2) = 2.75 I.
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(std::fabs(w(i, j) - (i == j ? 2.75 : 0.0)) < 1e-15);
    }
  }
  // Independent term-by-term evaluation on a random P.
  Rng rng(5);
  s.p = random_normal(4, 4, rng);
  s.alphas = {0.3, -0.7};
  Matrix want(4, 4);
  double factorial = 1.0;
  for (std::size_t k = 1; k <= 2; ++k) {
    factorial *= k;
    Matrix pk = Matrix::identity(4);
    for (std::size_t i = 0; i < k; ++i) pk = testutil::matmul_oracle(s.p, pk);
    add_in_place(want, scale(add(Matrix::identity(4), scale(pk, 1.0 / factorial)),
                             s.alphas[k - 1]));
  }
  CHECK(rel_err(context_weighting(s), want) < 1e-14);
}

TEST_CASE("context_weighting rejects empty series") {
  auto s = make_state(3, 1, Mode::kStructured, Activation::kTanh);
  s.alphas.clear();
  CHECK_THROWS_AS(context_weighting(s), std::invalid_argument);
}

TEST_CASE("project_structured identity recovery and zero case") {
  Rng rng(9);
  const Matrix e = random_normal(3, 5, rng);
  for (auto act : {Activation::kTanh, Activation::kRelu, Activation::kIdentity}) {
    auto s = make_state(3, 2, Mode::kStructured, act);
    s.p = Matrix::identity(3);
    s.alphas = {0.0, 0.0};
    CHECK(rel_err(project_structured(e, s), e) < 1e-12);
  }
  auto s0 = make_state(3, 2, Mode::kStructured, Activation::kTanh);
  s0.p = Matrix(3, 3);
  s0.alphas = {0.0, 0.0};
  CHECK(frobenius_norm(project_structured(e, s0)) == 0.0);
}

TEST_CASE("project_structured matches scalar-loop evaluation") {
  Rng rng(15);
  auto s = make_state(2, 2, Mode::kStructured, Activation::kTanh);
  s.p = random_normal(2, 2, rng);
  s.alphas = {0.8, -0.4};
  const Matrix e = random_normal(2, 2, rng);
  const Matrix got = project_structured(e, s);

  // Scalar re-evaluation: W_c entry by entry, then P E + tanh(W_c E).
  Matrix p2 = testutil::matmul_oracle(s.p, s.p);
  Matrix wc(2, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const double eye = i == j ? 1.0 : 0.0;
      wc(i, j) = s.alphas[0] * (eye + s.p(i, j)) + s.alphas[1] * (eye + p2(i, j) / 2.0);
    }
  }
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double pe = 0.0, we = 0.0;
      for (std::size_t k = 0; k < 2; ++k) {
        pe += s.p(i, k) * e(k, j);
        we += wc(i, k) * e(k, j);
      }
      CHECK(std::fabs(got(i, j) - (pe + std::tanh(we))) < 1e-12);
    }
  }
}

TEST_CASE("project_continuous trivial and quadrature cases") {
  Rng rng(21);
  const Matrix e = random_normal(5, 3, rng);
  auto s = make_state(5, 1, Mode::kContinuous, Activation::kTanh);
  s.p = Matrix(5, 5);
  CHECK(rel_err(project_continuous(e, s), e) < 1e-12);

  s.p = Matrix::identity(5);
  CHECK(rel_err(project_continuous(e, s), scale(e, std::exp(1.0) - 1.0)) < 1e-10);

  s.p = random_normal(5, 5, rng);
  s.p = scale(s.p, 2.0 / std::max(spectral_norm_bound(s.p), 1e-12));
  CHECK(rel_err(project_continuous(e, s), testutil::simpson_exp_integral_oracle(s.p, e)) < 1e-8);
}

TEST_CASE("continuous mode is linear in E") {
  Rng rng(25);
  auto s = make_state(4, 1, Mode::kContinuous, Activation::kTanh);
  s.p = scale(random_normal(4, 4, rng), 0.4);
  const Matrix e1 = random_normal(4, 6, rng);
  const Matrix e2 = random_normal(4, 6, rng);
  const double a = 1.7, b = -0.3;
  const Matrix lhs = project_continuous(add(scale(e1, a), scale(e2, b)), s);
  const Matrix rhs =
      add(scale(project_continuous(e1, s), a), scale(project_continuous(e2, s), b));
  CHECK(rel_err(lhs, rhs) < 1e-10);
}

TEST_CASE("sep_objective trivial cases") {
  auto s = make_state(1, 1, Mode::kStructured, Activation::kTanh, 3.5);
  s.p = Matrix(1, 1, {1.0});
  const Matrix e(1, 2, {3.0, 3.0});
  CHECK(sep_objective(s, e) == 0.0);

  auto s2 = make_state(2, 1, Mode::kStructured, Activation::kTanh, 0.0);
  s2.p = Matrix(2, 2);
  const Matrix e2(2, 2, {1.0, 3.0, 2.0, 4.0});  // columns (1,2) and (3,4)
  CHECK(std::fabs(sep_objective(s2, e2) - 26.0) < 1e-12);
}

TEST_CASE("sep_objective scalar-loop oracle") {
  Rng rng(27);
  auto s = make_state(3, 1, Mode::kStructured, Activation::kTanh, 0.7);
  s.p = random_normal(3, 3, rng);
  const Matrix e = random_normal(3, 5, rng);
  double want = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 5; ++j) mean += e(i, j);
    mean /= 5.0;
    for (std::size_t j = 0; j < 5; ++j) {
      double pe = 0.0;
      for (std::size_t k = 0; k < 3; ++k) pe += s.p(i, k) * e(k, j);
      want += (pe - mean) * (pe - mean);
    }
  }
  const Matrix lap = laplacian(s.p);
  want += s.lambda * frobenius_dot(lap, lap);
  CHECK(std::fabs(sep_objective(s, e) - want) < 1e-12 * std::max(1.0, want));
}

TEST_CASE("sep_objective lambda dominance") {
  Rng rng(33);
  auto s = make_state(4, 1, Mode::kStructured, Activation::kTanh, 0.0);
  s.p = add(Matrix::identity(4), random_normal(4, 4, rng, 0.5));  // nonconstant
  // Small data term: E columns nearly equal so P E is close to the mean.
  Matrix e = Matrix::constant(4, 6, 1.0);
  e(0, 0) += 1e-3;
  const double j0 = sep_objective(s, e);
  s.lambda = 1e6;
  const double j1 = sep_objective(s, e);
  CHECK(j1 / j0 > 1e3);
}

TEST_CASE("sep_objective nonnegative and zero only at the minimum") {
  Rng rng(35);
  for (int t = 0; t < 20; ++t) {
    auto s = make_state(3, 1, Mode::kStructured, Activation::kTanh, 0.1 * t);
    s.p = random_normal(3, 3, rng);
    const Matrix e = random_normal(3, 4, rng);
    CHECK(sep_objective(s, e) >= 0.0);
  }
}

TEST_CASE("sep_objective_grad stationary at equal columns") {
  auto s = make_state(3, 1, Mode::kStructured, Activation::kTanh, 0.0);
  s.p = Matrix::identity(3);
  Matrix e(3, 4);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) e(i, j) = 0.5 * (i + 1);
  }
  CHECK(frobenius_norm(sep_objective_grad(s, e)) == 0.0);
}

TEST_CASE("sep_objective_grad vanishes at the normal-equations solution") {
  Rng rng(39);
  const Matrix e = random_normal(3, 6, rng);  // full row rank with probability 1
  const Matrix m_broadcast = [&] {
    Matrix m(3, 6);
    for (std::size_t i = 0; i < 3; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 6; ++j) mean += e(i, j);
      mean /= 6.0;
      for (std::size_t j = 0; j < 6; ++j) m(i, j) = mean;
    }
    return m;
  }();
  // P* = M E^T (E E^T)^{-1}, solved row by row: (E E^T) x = (M E^T)^T row.
  const Matrix gram = testutil::matmul_oracle(e, transpose(e));
  const Matrix rhs = testutil::matmul_oracle(m_broadcast, transpose(e));
  Matrix p_star(3, 3);
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> b(3);
    for (std::size_t c = 0; c < 3; ++c) b[c] = rhs(r, c);
    const auto x = solve_small(gram, b);
    for (std::size_t c = 0; c < 3; ++c) p_star(r, c) = x[c];
  }
  auto s = make_state(3, 1, Mode::kStructured, Activation::kTanh, 0.0);
  s.p = p_star;
  CHECK(frobenius_norm(sep_objective_grad(s, e)) < 1e-8);
}

TEST_CASE("sep_objective_grad matches finite differences entrywise") {
  Rng rng(45);
  auto s = make_state(4, 1, Mode::kStructured, Activation::kTanh, 0.35);
  s.p = random_normal(4, 4, rng);
  const Matrix e = random_normal(4, 7, rng);
  const Matrix analytic = sep_objective_grad(s, e);
  const Matrix fd =
      testutil::finite_difference(s.p, [&] { return sep_objective(s, e); });
  CHECK(testutil::grads_match(analytic, fd, 1e-5, 1e-8));
}

TEST_CASE("sep_objective_grad_embeddings matches finite differences") {
  Rng rng(47);
  auto s = make_state(3, 1, Mode::kStructured, Activation::kTanh, 0.2);
  s.p = random_normal(3, 3, rng);
  Matrix e = random_normal(3, 5, rng);
  const Matrix analytic = sep_objective_grad_embeddings(s, e);
  const Matrix fd =
      testutil::finite_difference(e, [&] { return sep_objective(s, e); });
  CHECK(testutil::grads_match(analytic, fd, 1e-5, 1e-8));
}

TEST_CASE("gradient descent on sep_objective is monotone") {
  Rng rng(49);
  auto s = make_state(3, 1, Mode::kStructured, Activation::kTanh, 0.1);
  s.p = add(Matrix::identity(3), random_normal(3, 3, rng, 0.3));
  const Matrix e = random_normal(3, 6, rng, 0.8);
  double prev = sep_objective(s, e);
  for (int step = 0; step < 50; ++step) {
    axpy_in_place(s.p, -1e-3, sep_objective_grad(s, e));
    const double now = sep_objective(s, e);
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
}

TEST_CASE("sep_forward_backward zero upstream gives zero gradients") {
  Rng rng(51);
  for (auto mode : {Mode::kStructured, Mode::kContinuous}) {
    auto s = make_state(3, 2, mode, Activation::kTanh);
    const Matrix e = random_normal(3, 4, rng);
    const auto grads = sep_forward_backward(e, Matrix(3, 4), s);
    CHECK(frobenius_norm(grads.p) == 0.0);
    CHECK(frobenius_norm(grads.e) == 0.0);
    for (double a : grads.alphas) CHECK(a == 0.0);
  }
}

TEST_CASE("sep_forward_backward linear special case") {
  Rng rng(53);
  auto s = make_state(3, 2, Mode::kStructured, Activation::kIdentity);
  s.alphas = {0.0, 0.0};
  s.p = random_normal(3, 3, rng);
  const Matrix e = random_normal(3, 5, rng);
  const Matrix upstream = random_normal(3, 5, rng);
  const auto grads = sep_forward_backward(e, upstream, s);
  CHECK(rel_err(grads.p, testutil::matmul_oracle(upstream, transpose(e))) < 1e-12);
}

TEST_CASE("sep_forward_backward rejects mode off") {
  auto s = make_state(3, 1, Mode::kOff, Activation::kTanh);
  const Matrix e(3, 2);
  CHECK_THROWS_AS(sep_forward_backward(e, Matrix(3, 2), s), std::invalid_argument);
}

TEST_CASE("sep_forward_backward structured matches finite differences") {
  Rng rng(55);
  auto s = make_state(3, 3, Mode::kStructured, Activation::kTanh);
  s.p = scale(random_normal(3, 3, rng), 0.6);
  s.alphas = {0.5, -0.3, 0.2};
  Matrix e = random_normal(3, 4, rng);
  const Matrix upstream = random_normal(3, 4, rng);
  const auto grads = sep_forward_backward(e, upstream, s);

  auto loss = [&] { return frobenius_dot(upstream, sep_forward(e, s)); };
  CHECK(testutil::grads_match(grads.p, testutil::finite_difference(s.p, loss)));
  CHECK(testutil::grads_match(grads.e, testutil::finite_difference(e, loss)));
  for (std::size_t k = 0; k < s.alphas.size(); ++k) {
    const double saved = s.alphas[k];
    s.alphas[k] = saved + 1e-6;
    const double up = loss();
    s.alphas[k] = saved - 1e-6;
    const double down = loss();
    s.alphas[k] = saved;
    const double fd = (up - down) / 2e-6;
    CHECK(testutil::close(grads.alphas[k], fd, 1e-4, 1e-8));
  }
}

TEST_CASE("sep_forward_backward continuous matches finite differences") {
  Rng rng(57);
  auto s = make_state(3, 1, Mode::kContinuous, Activation::kTanh);
  s.p = scale(random_normal(3, 3, rng), 0.8);
  Matrix e = random_normal(3, 4, rng);
  const Matrix upstream = random_normal(3, 4, rng);
  const auto grads = sep_forward_backward(e, upstream, s);

  auto loss = [&] { return frobenius_dot(upstream, sep_forward(e, s)); };
  CHECK(testutil::grads_match(grads.p, testutil::finite_difference(s.p, loss)));
  CHECK(testutil::grads_match(grads.e, testutil::finite_difference(e, loss)));
}

TEST_CASE("structured relu backward away from the kink") {
  Rng rng(59);
  auto s = make_state(3, 2, Mode::kStructured, Activation::kRelu);
  s.p = scale(random_normal(3, 3, rng), 0.7);
  s.alphas = {0.9, 0.4};
  Matrix e = add(random_normal(3, 4, rng), Matrix::constant(3, 4, 0.5));
  const Matrix upstream = random_normal(3, 4, rng);

  // Keep pre-activations clear of zero so central differences are valid.
  SepTape tape;
  sep_forward_cached(e, s, tape);
  double min_abs = 1e9;
  for (std::size_t i = 0; i < tape.preact.size(); ++i) {
    min_abs = std::min(min_abs, std::fabs(tape.preact.data()[i]));
  }
  REQUIRE(min_abs > 1e-3);

  const auto grads = sep_backward(tape, upstream, s);
  auto loss = [&] { return frobenius_dot(upstream, sep_forward(e, s)); };
  CHECK(testutil::grads_match(grads.p, testutil::finite_difference(s.p, loss)));
  CHECK(testutil::grads_match(grads.e, testutil::finite_difference(e, loss)));
}
