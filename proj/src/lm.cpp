#include "seplab/lm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "seplab/kernels.hpp"

namespace seplab::lm {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kLnEps = 1e-5;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kInitStd = 0.02;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// y = x W + b, rows of x are positions.
Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = mat_mul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b(0, j);
  }
  return y;
}

void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dx_out,
                     Matrix& dw_acc, Matrix& db_acc) {
  dx_out = mat_mul(dy, transpose(w));
  add_in_place(dw_acc, mat_mul(transpose(x), dy));
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    for (std::size_t j = 0; j < dy.cols(); ++j) db_acc(0, j) += dy(i, j);
  }
}

struct LnCache {
  Matrix xhat;
  std::vector<double> rstd;
};

Matrix layernorm(const Matrix& x, const Matrix& gain, const Matrix& bias, LnCache& cache) {
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  cache.xhat = Matrix(rows, d);
  cache.rstd.assign(rows, 0.0);
  Matrix y(rows, d);
  for (std::size_t i = 0; i < rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd[i] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x(i, j) - mean) * rstd;
      cache.xhat(i, j) = xh;
      y(i, j) = gain(0, j) * xh + bias(0, j);
    }
  }
  return y;
}

Matrix layernorm_backward(const LnCache& cache, const Matrix& gain, const Matrix& dy,
                          Matrix& dgain_acc, Matrix& dbias_acc) {
  const std::size_t rows = dy.rows();
  const std::size_t d = dy.cols();
  Matrix dx(rows, d);
  for (std::size_t i = 0; i < rows; ++i) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy(i, j) * gain(0, j);
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * cache.xhat(i, j);
      dgain_acc(0, j) += dy(i, j) * cache.xhat(i, j);
      dbias_acc(0, j) += dy(i, j);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy(i, j) * gain(0, j);
      dx(i, j) = cache.rstd[i] * (dxh - mean_dxhat - cache.xhat(i, j) * mean_dxhat_xhat);
    }
  }
  return dx;
}

struct LayerCache {
  Matrix x_in;
  LnCache ln1;
  Matrix normed1;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, lower-triangular T x T
  Matrix attn_concat;
  Matrix x_mid;
  LnCache ln2;
  Matrix normed2;
  Matrix ffn_pre;
  Matrix ffn_act;
};

struct WindowCache {
  std::vector<int> tokens;
  Matrix x0;     // embeddings plus positions, before the projection
  Matrix x_sep;  // after the projection (equals x0 when mode is off)
  bool sep_applied = false;
  sep::SepTape sep_tape;
  std::vector<LayerCache> layers;
  LnCache lnf;
  Matrix lnf_out;
  Matrix logits;
};

struct LayerParams {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_g, ln2_b, w1, b1, w2, b2;
};

}  // namespace

void LmConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || batch_size == 0) {
    throw std::invalid_argument("LmConfig: counts must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("LmConfig: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (ctx_len < 2) throw std::invalid_argument("LmConfig: ctx_len must be >= 2");
  if (vocab_size < 2) throw std::invalid_argument("LmConfig: vocab_size must be >= 2");
  if (!(lr >= 0.0)) throw std::invalid_argument("LmConfig: lr must be >= 0");
  if (optimizer != "adam" && optimizer != "sgd") {
    throw std::invalid_argument("LmConfig: unknown optimizer '" + optimizer + "'");
  }
  if (sep_k == 0) throw std::invalid_argument("LmConfig: sep_k must be >= 1");
  if (!(sep_lambda >= 0.0) || !(sep_mu >= 0.0)) {
    throw std::invalid_argument("LmConfig: sep_lambda and sep_mu must be >= 0");
  }
}

LmModel::LmModel(const LmConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::size_t d = cfg_.d_model;
  const std::size_t hidden = 4 * d;
  auto push = [&](const std::string& name, Matrix value) {
    params_.emplace_back(name, std::move(value));
  };
  push("wte", random_normal(cfg_.vocab_size, d, rng, kInitStd));
  push("wpe", random_normal(cfg_.ctx_len, d, rng, kInitStd));
  push("sep.p", add(Matrix::identity(d), random_normal(d, d, rng, cfg_.sep_init_eps)));
  push("sep.alpha",
       Matrix::constant(1, cfg_.sep_k, 1.0 / static_cast<double>(cfg_.sep_k)));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    push(prefix + "ln1.g", Matrix::constant(1, d, 1.0));
    push(prefix + "ln1.b", Matrix(1, d));
    push(prefix + "attn.wq", random_normal(d, d, rng, kInitStd));
    push(prefix + "attn.bq", Matrix(1, d));
    push(prefix + "attn.wk", random_normal(d, d, rng, kInitStd));
    push(prefix + "attn.bk", Matrix(1, d));
    push(prefix + "attn.wv", random_normal(d, d, rng, kInitStd));
    push(prefix + "attn.bv", Matrix(1, d));
    push(prefix + "attn.wo", random_normal(d, d, rng, kInitStd));
    push(prefix + "attn.bo", Matrix(1, d));
    push(prefix + "ln2.g", Matrix::constant(1, d, 1.0));
    push(prefix + "ln2.b", Matrix(1, d));
    push(prefix + "ffn.w1", random_normal(d, hidden, rng, kInitStd));
    push(prefix + "ffn.b1", Matrix(1, hidden));
    push(prefix + "ffn.w2", random_normal(hidden, d, rng, kInitStd));
    push(prefix + "ffn.b2", Matrix(1, d));
  }
  push("ln_f.g", Matrix::constant(1, d, 1.0));
  push("ln_f.b", Matrix(1, d));
  push("head.w", random_normal(d, cfg_.vocab_size, rng, kInitStd));
  push("head.b", Matrix(1, cfg_.vocab_size));
}

Param& LmModel::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("LmModel: no parameter named '" + name + "'");
}

const Param& LmModel::param(const std::string& name) const {
  return const_cast<LmModel*>(this)->param(name);
}

sep::ProjectionState LmModel::sep_state() const {
  sep::ProjectionState state;
  state.p = param("sep.p").value;
  const Matrix& alpha = param("sep.alpha").value;
  state.alphas.assign(alpha.data(), alpha.data() + alpha.size());
  state.lambda = cfg_.sep_lambda;
  state.mu = cfg_.sep_mu;
  state.mode = cfg_.sep_mode;
  state.activation = cfg_.sep_activation;
  return state;
}

void LmModel::zero_grads() {
  for (auto& p : params_) {
    std::fill(p.grad.data(), p.grad.data() + p.grad.size(), 0.0);
  }
}

namespace {

LayerParams layer_indices(const LmModel& model, std::size_t layer) {
  // Parameters were pushed in a fixed order: 4 globals, then 16 per layer.
  const std::size_t base = 4 + layer * 16;
  return LayerParams{base,     base + 1, base + 2,  base + 3,  base + 4,  base + 5,
                     base + 6, base + 7, base + 8,  base + 9,  base + 10, base + 11,
                     base + 12, base + 13, base + 14, base + 15};
}

void validate_tokens(const LmModel& model, std::span<const int> tokens) {
  const auto& cfg = model.config();
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (tokens.size() > cfg.ctx_len) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(tokens.size()) +
                                " exceeds ctx_len " + std::to_string(cfg.ctx_len));
  }
  for (const int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw std::invalid_argument("forward: token id " + std::to_string(id) +
                                  " outside vocabulary of size " +
                                  std::to_string(cfg.vocab_size));
    }
  }
}

void forward_window(const LmModel& model, std::span<const int> tokens, WindowCache& cache,
                    const sep::ProjectionState* sep_state, ForwardTrace* trace) {
  validate_tokens(model, tokens);
  const auto& cfg = model.config();
  const std::size_t t_len = tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t n_heads = cfg.n_heads;
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  cache.tokens.assign(tokens.begin(), tokens.end());
  const Matrix& wte = model.params()[0].value;
  const Matrix& wpe = model.params()[1].value;
  cache.x0 = Matrix(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto tok = static_cast<std::size_t>(tokens[t]);
    for (std::size_t j = 0; j < d; ++j) cache.x0(t, j) = wte(tok, j) + wpe(t, j);
  }

  cache.sep_applied = cfg.sep_mode != sep::Mode::kOff;
  if (cache.sep_applied) {
    const Matrix projected =
        sep::sep_forward_cached(transpose(cache.x0), *sep_state, cache.sep_tape);
    cache.x_sep = transpose(projected);
  } else {
    cache.x_sep = cache.x0;
  }

  Matrix x = cache.x_sep;
  cache.layers.assign(cfg.n_layers, LayerCache{});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerCache& lc = cache.layers[l];
    const LayerParams idx = layer_indices(model, l);
    const auto& pp = model.params();
    lc.x_in = x;
    lc.normed1 = layernorm(x, pp[idx.ln1_g].value, pp[idx.ln1_b].value, lc.ln1);
    lc.q = linear(lc.normed1, pp[idx.wq].value, pp[idx.bq].value);
    lc.k = linear(lc.normed1, pp[idx.wk].value, pp[idx.bk].value);
    lc.v = linear(lc.normed1, pp[idx.wv].value, pp[idx.bv].value);
    lc.attn_concat = Matrix(t_len, d);
    lc.probs.assign(n_heads, Matrix(t_len, t_len));
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * hd;
      Matrix& probs = lc.probs[h];
      for (std::size_t i = 0; i < t_len; ++i) {
        // Causal scores: positions j <= i only.
        double max_score = -1e300;
        std::vector<double> scores(i + 1, 0.0);
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += lc.q(i, off + c) * lc.k(j, off + c);
          s *= scale;
          scores[j] = s;
          max_score = std::max(max_score, s);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - max_score);
          denom += scores[j];
        }
        for (std::size_t j = 0; j <= i; ++j) probs(i, j) = scores[j] / denom;
        for (std::size_t c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j <= i; ++j) acc += probs(i, j) * lc.v(j, off + c);
          lc.attn_concat(i, off + c) = acc;
        }
      }
      if (trace) trace->attention.push_back(probs);
    }
    const Matrix attn_out = linear(lc.attn_concat, pp[idx.wo].value, pp[idx.bo].value);
    lc.x_mid = add(lc.x_in, attn_out);
    lc.normed2 = layernorm(lc.x_mid, pp[idx.ln2_g].value, pp[idx.ln2_b].value, lc.ln2);
    lc.ffn_pre = linear(lc.normed2, pp[idx.w1].value, pp[idx.b1].value);
    lc.ffn_act = lc.ffn_pre;
    for (std::size_t i = 0; i < lc.ffn_act.size(); ++i) {
      lc.ffn_act.data()[i] = gelu(lc.ffn_pre.data()[i]);
    }
    const Matrix ffn_out = linear(lc.ffn_act, pp[idx.w2].value, pp[idx.b2].value);
    x = add(lc.x_mid, ffn_out);
  }

  const auto& pp = model.params();
  const std::size_t n_params = pp.size();
  const Matrix& lnf_g = pp[n_params - 4].value;
  const Matrix& lnf_b = pp[n_params - 3].value;
  const Matrix& head_w = pp[n_params - 2].value;
  const Matrix& head_b = pp[n_params - 1].value;
  cache.lnf_out = layernorm(x, lnf_g, lnf_b, cache.lnf);
  cache.logits = linear(cache.lnf_out, head_w, head_b);
  cache.logits.ensure_finite("forward logits");
}

// Accumulates parameter gradients for one window given d(loss)/d(logits).
// Returns nothing; the embedding-path gradient lands in wte/wpe and, when a
// projection mode is active, in sep.p/sep.alpha via the tape.
void backward_window(LmModel& model, const WindowCache& cache, const Matrix& d_logits,
                     const sep::ProjectionState* sep_state) {
  const auto& cfg = model.config();
  const std::size_t t_len = cache.tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t n_heads = cfg.n_heads;
  const std::size_t hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  auto& pp = model.params();
  const std::size_t n_params = pp.size();
  Param& lnf_g = pp[n_params - 4];
  Param& lnf_b = pp[n_params - 3];
  Param& head_w = pp[n_params - 2];
  Param& head_b = pp[n_params - 1];

  Matrix dx;
  linear_backward(cache.lnf_out, head_w.value, d_logits, dx, head_w.grad, head_b.grad);
  dx = layernorm_backward(cache.lnf, lnf_g.value, dx, lnf_g.grad, lnf_b.grad);

  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    const LayerCache& lc = cache.layers[l];
    const LayerParams idx = layer_indices(model, l);

    // Feed-forward residual branch.
    Matrix d_ffn_out = dx;  // residual carries dx through unchanged
    Matrix d_act;
    linear_backward(lc.ffn_act, pp[idx.w2].value, d_ffn_out, d_act, pp[idx.w2].grad,
                    pp[idx.b2].grad);
    for (std::size_t i = 0; i < d_act.size(); ++i) {
      d_act.data()[i] *= gelu_derivative(lc.ffn_pre.data()[i]);
    }
    Matrix d_normed2;
    linear_backward(lc.normed2, pp[idx.w1].value, d_act, d_normed2, pp[idx.w1].grad,
                    pp[idx.b1].grad);
    Matrix d_mid = layernorm_backward(lc.ln2, pp[idx.ln2_g].value, d_normed2,
                                      pp[idx.ln2_g].grad, pp[idx.ln2_b].grad);
    add_in_place(d_mid, dx);  // residual connection

    // Attention branch.
    Matrix d_concat;
    linear_backward(lc.attn_concat, pp[idx.wo].value, d_mid, d_concat, pp[idx.wo].grad,
                    pp[idx.bo].grad);
    Matrix dq(t_len, d), dk(t_len, d), dv(t_len, d);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * hd;
      const Matrix& probs = lc.probs[h];
      for (std::size_t i = 0; i < t_len; ++i) {
        // d(probs) and the softmax Jacobian, rows j <= i.
        std::vector<double> d_probs(i + 1, 0.0);
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += d_concat(i, off + c) * lc.v(j, off + c);
          d_probs[j] = s;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) dot += probs(i, j) * d_probs[j];
        for (std::size_t j = 0; j <= i; ++j) {
          const double d_score = probs(i, j) * (d_probs[j] - dot);
          for (std::size_t c = 0; c < hd; ++c) {
            dq(i, off + c) += d_score * lc.k(j, off + c) * scale;
            dk(j, off + c) += d_score * lc.q(i, off + c) * scale;
          }
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const double pij = probs(i, j);
          for (std::size_t c = 0; c < hd; ++c) {
            dv(j, off + c) += pij * d_concat(i, off + c);
          }
        }
      }
    }
    Matrix d_normed1(t_len, d);
    {
      Matrix tmp;
      linear_backward(lc.normed1, pp[idx.wq].value, dq, tmp, pp[idx.wq].grad, pp[idx.bq].grad);
      d_normed1 = tmp;
      linear_backward(lc.normed1, pp[idx.wk].value, dk, tmp, pp[idx.wk].grad, pp[idx.bk].grad);
      add_in_place(d_normed1, tmp);
      linear_backward(lc.normed1, pp[idx.wv].value, dv, tmp, pp[idx.wv].grad, pp[idx.bv].grad);
      add_in_place(d_normed1, tmp);
    }
    Matrix d_in = layernorm_backward(lc.ln1, pp[idx.ln1_g].value, d_normed1,
                                     pp[idx.ln1_g].grad, pp[idx.ln1_b].grad);
    add_in_place(d_in, d_mid);  // residual connection
    dx = std::move(d_in);
  }

  // Through the projection into the embedding tables.
  Matrix d_x0;
  if (cache.sep_applied) {
    const auto grads = sep::sep_backward(cache.sep_tape, transpose(dx), *sep_state);
    add_in_place(pp[2].grad, grads.p);
    Matrix& alpha_grad = pp[3].grad;
    for (std::size_t k = 0; k < grads.alphas.size(); ++k) alpha_grad(0, k) += grads.alphas[k];
    d_x0 = transpose(grads.e);
  } else {
    d_x0 = std::move(dx);
  }
  Param& wte = pp[0];
  Param& wpe = pp[1];
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto tok = static_cast<std::size_t>(cache.tokens[t]);
    for (std::size_t j = 0; j < d; ++j) {
      wte.grad(tok, j) += d_x0(t, j);
      wpe.grad(t, j) += d_x0(t, j);
    }
  }
}

// Row-stable log-sum-exp.
double row_lse(const Matrix& logits, std::size_t row) {
  double m = logits(row, 0);
  for (std::size_t j = 1; j < logits.cols(); ++j) m = std::max(m, logits(row, j));
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.cols(); ++j) sum += std::exp(logits(row, j) - m);
  return m + std::log(sum);
}

}  // namespace

Matrix forward(const LmModel& model, std::span<const int> tokens, ForwardTrace* trace) {
  WindowCache cache;
  const sep::ProjectionState state =
      model.config().sep_mode != sep::Mode::kOff ? model.sep_state() : sep::ProjectionState{};
  forward_window(model, tokens, cache,
                 model.config().sep_mode != sep::Mode::kOff ? &state : nullptr, trace);
  return cache.logits;
}

double loss(const Matrix& logits, std::span<const int> targets) {
  if (logits.rows() != targets.size()) {
    throw std::invalid_argument("loss: " + std::to_string(logits.rows()) + " logit rows vs " +
                                std::to_string(targets.size()) + " targets");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int target = targets[t];
    if (target < 0 || static_cast<std::size_t>(target) >= logits.cols()) {
      throw std::invalid_argument("loss: target id " + std::to_string(target) + " out of range");
    }
    total += row_lse(logits, t) - logits(t, static_cast<std::size_t>(target));
  }
  return total / static_cast<double>(targets.size());
}

StepStats batch_loss_and_grads(LmModel& model, std::span<const corpus::Window> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const auto& cfg = model.config();
  model.zero_grads();
  const bool sep_on = cfg.sep_mode != sep::Mode::kOff;
  const sep::ProjectionState state = sep_on ? model.sep_state() : sep::ProjectionState{};

  std::size_t total_positions = 0;
  for (const auto& w : batch) total_positions += w.targets.size();

  StepStats stats;
  Matrix e_batch;
  if (sep_on) e_batch = Matrix(cfg.d_model, total_positions);

  double nll_sum = 0.0;
  std::size_t col = 0;
  for (const auto& w : batch) {
    if (w.inputs.size() != w.targets.size()) {
      throw std::invalid_argument("train_step: window input/target length mismatch");
    }
    WindowCache cache;
    forward_window(model, w.inputs, cache, sep_on ? &state : nullptr, nullptr);
    // d(mean NLL)/d(logits) = (softmax - onehot) / total positions.
    Matrix d_logits(cache.logits.rows(), cache.logits.cols());
    for (std::size_t t = 0; t < w.targets.size(); ++t) {
      const double lse = row_lse(cache.logits, t);
      nll_sum += lse - cache.logits(t, static_cast<std::size_t>(w.targets[t]));
      for (std::size_t j = 0; j < cache.logits.cols(); ++j) {
        d_logits(t, j) = std::exp(cache.logits(t, j) - lse);
      }
      d_logits(t, static_cast<std::size_t>(w.targets[t])) -= 1.0;
    }
    const double inv_n = 1.0 / static_cast<double>(total_positions);
    for (std::size_t i = 0; i < d_logits.size(); ++i) d_logits.data()[i] *= inv_n;
    backward_window(model, cache, d_logits, sep_on ? &state : nullptr);
    if (sep_on) {
      for (std::size_t t = 0; t < w.inputs.size(); ++t, ++col) {
        for (std::size_t j = 0; j < cfg.d_model; ++j) e_batch(j, col) = cache.x0(t, j);
      }
    }
  }
  stats.ce = nll_sum / static_cast<double>(total_positions);

  if (sep_on) {
    stats.sep = sep::sep_objective(state, e_batch);
    axpy_in_place(model.params()[2].grad, cfg.sep_mu, sep::sep_objective_grad(state, e_batch));
    const Matrix d_e = sep::sep_objective_grad_embeddings(state, e_batch);
    Param& wte = model.params()[0];
    Param& wpe = model.params()[1];
    col = 0;
    for (const auto& w : batch) {
      for (std::size_t t = 0; t < w.inputs.size(); ++t, ++col) {
        const auto tok = static_cast<std::size_t>(w.inputs[t]);
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
          const double g = cfg.sep_mu * d_e(j, col);
          wte.grad(tok, j) += g;
          wpe.grad(t, j) += g;
        }
      }
    }
  }
  stats.total = stats.ce + cfg.sep_mu * stats.sep;
  return stats;
}

namespace {

void apply_optimizer(LmModel& model) {
  const auto& cfg = model.config();
  if (cfg.optimizer == "sgd") {
    for (auto& p : model.params()) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        p.value.data()[i] -= cfg.lr * p.grad.data()[i];
      }
    }
    return;
  }
  ++model.adam_step_count;
  const double t = static_cast<double>(model.adam_step_count);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
  for (auto& p : model.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data()[i];
      double& m = p.m.data()[i];
      double& v = p.v.data()[i];
      m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
      v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
      p.value.data()[i] -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
    }
  }
}

void require_finite_params(const LmModel& model, const char* when) {
  for (const auto& p : model.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!std::isfinite(p.value.data()[i])) {
        throw NumericalError(std::string(when) + ": non-finite value in parameter block '" +
                             p.name + "'");
      }
    }
  }
}

}  // namespace

StepStats train_step(LmModel& model, std::span<const corpus::Window> batch) {
  const StepStats stats = batch_loss_and_grads(model, batch);
  if (!std::isfinite(stats.total)) {
    // Name the first offending block for the diagnostic.
    for (const auto& p : model.params()) {
      for (std::size_t i = 0; i < p.grad.size(); ++i) {
        if (!std::isfinite(p.grad.data()[i]) || !std::isfinite(p.value.data()[i])) {
          throw NumericalError("train_step: non-finite loss; first offending parameter block '" +
                               p.name + "'");
        }
      }
    }
    throw NumericalError("train_step: non-finite loss");
  }
  apply_optimizer(model);
  require_finite_params(model, "train_step");
  return stats;
}

std::vector<int> generate(const LmModel& model, std::span<const int> prompt, std::size_t max_new,
                          double temperature, std::uint64_t seed) {
  const auto& cfg = model.config();
  if (prompt.empty()) throw std::invalid_argument("generate: prompt must be nonempty");
  if (prompt.size() > cfg.ctx_len) {
    throw std::invalid_argument("generate: prompt length " + std::to_string(prompt.size()) +
                                " exceeds ctx_len " + std::to_string(cfg.ctx_len));
  }
  if (temperature < 0.0) throw std::invalid_argument("generate: temperature must be >= 0");
  std::vector<int> seq(prompt.begin(), prompt.end());
  Rng rng(seed);
  for (std::size_t n = 0; n < max_new; ++n) {
    const std::size_t window = std::min(seq.size(), cfg.ctx_len);
    const std::span<const int> view(seq.data() + seq.size() - window, window);
    const Matrix logits = forward(model, view);
    const std::size_t last = logits.rows() - 1;
    int pick = 0;
    if (temperature == 0.0) {
      double best = logits(last, 0);
      for (std::size_t j = 1; j < logits.cols(); ++j) {
        if (logits(last, j) > best) {  // strict: ties keep the lowest id
          best = logits(last, j);
          pick = static_cast<int>(j);
        }
      }
    } else {
      double m = logits(last, 0);
      for (std::size_t j = 1; j < logits.cols(); ++j) m = std::max(m, logits(last, j));
      std::vector<double> probs(logits.cols(), 0.0);
      double denom = 0.0;
      for (std::size_t j = 0; j < logits.cols(); ++j) {
        probs[j] = std::exp((logits(last, j) - m) / temperature);
        denom += probs[j];
      }
      const double u = rng.uniform() * denom;
      double cum = 0.0;
      pick = static_cast<int>(logits.cols()) - 1;
      for (std::size_t j = 0; j < probs.size(); ++j) {
        cum += probs[j];
        if (u < cum) {
          pick = static_cast<int>(j);
          break;
        }
      }
    }
    seq.push_back(pick);
  }
  return seq;
}

namespace {

ordered_json matrix_to_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const ordered_json& j, std::size_t rows, std::size_t cols,
                        const std::string& name) {
  if (!j.is_array() || j.size() != rows) {
    throw std::runtime_error("checkpoint: tensor '" + name + "' has wrong row count");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || row.size() != cols) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' has wrong shape at row " +
                               std::to_string(i));
    }
    for (std::size_t c = 0; c < cols; ++c) m(i, c) = row[c].get<double>();
  }
  m.ensure_finite("checkpoint load");
  return m;
}

}  // namespace

void save_checkpoint(const LmModel& model, const std::vector<std::string>& vocab_tokens,
                     const std::string& tokenizer_mode, const std::string& path) {
  const auto& cfg = model.config();
  ordered_json doc;
  doc["format"] = "sep-lab/1";
  ordered_json jc;
  jc["d_model"] = cfg.d_model;
  jc["n_layers"] = cfg.n_layers;
  jc["n_heads"] = cfg.n_heads;
  jc["ctx_len"] = cfg.ctx_len;
  jc["vocab_size"] = cfg.vocab_size;
  jc["lr"] = cfg.lr;
  jc["batch_size"] = cfg.batch_size;
  jc["epochs"] = cfg.epochs;
  jc["seed"] = cfg.seed;
  jc["optimizer"] = cfg.optimizer;
  jc["train_stride"] = cfg.train_stride;
  jc["sep_mode"] = sep::to_string(cfg.sep_mode);
  jc["sep_k"] = cfg.sep_k;
  jc["sep_lambda"] = cfg.sep_lambda;
  jc["sep_mu"] = cfg.sep_mu;
  jc["sep_init_eps"] = cfg.sep_init_eps;
  jc["sep_activation"] = sep::to_string(cfg.sep_activation);
  doc["config"] = std::move(jc);
  doc["tokenizer_mode"] = tokenizer_mode;
  doc["vocab"] = vocab_tokens;
  ordered_json tensors;
  for (const auto& p : model.params()) tensors[p.name] = matrix_to_json(p.value);
  doc["params"] = std::move(tensors);
  corpus::write_file(path, doc.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(corpus::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path + ": " + e.what());
  }
  if (doc.value("format", "") != "sep-lab/1") {
    throw std::runtime_error("checkpoint format mismatch in " + path + " (expected sep-lab/1)");
  }
  const auto& jc = doc.at("config");
  LmConfig cfg;
  cfg.d_model = jc.at("d_model").get<std::size_t>();
  cfg.n_layers = jc.at("n_layers").get<std::size_t>();
  cfg.n_heads = jc.at("n_heads").get<std::size_t>();
  cfg.ctx_len = jc.at("ctx_len").get<std::size_t>();
  cfg.vocab_size = jc.at("vocab_size").get<std::size_t>();
  cfg.lr = jc.at("lr").get<double>();
  cfg.batch_size = jc.at("batch_size").get<std::size_t>();
  cfg.epochs = jc.at("epochs").get<std::size_t>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();
  cfg.optimizer = jc.at("optimizer").get<std::string>();
  cfg.train_stride = jc.at("train_stride").get<std::size_t>();
  cfg.sep_mode = sep::mode_from_string(jc.at("sep_mode").get<std::string>());
  cfg.sep_k = jc.at("sep_k").get<std::size_t>();
  cfg.sep_lambda = jc.at("sep_lambda").get<double>();
  cfg.sep_mu = jc.at("sep_mu").get<double>();
  cfg.sep_init_eps = jc.at("sep_init_eps").get<double>();
  cfg.sep_activation = sep::activation_from_string(jc.at("sep_activation").get<std::string>());

  LmModel model(cfg);
  const auto& tensors = doc.at("params");
  for (auto& p : model.params()) {
    if (!tensors.contains(p.name)) {
      throw std::runtime_error("checkpoint: missing tensor '" + p.name + "'");
    }
    p.value = matrix_from_json(tensors.at(p.name), p.value.rows(), p.value.cols(), p.name);
  }
  std::vector<std::string> vocab_tokens;
  for (const auto& tok : doc.at("vocab")) vocab_tokens.push_back(tok.get<std::string>());
  if (vocab_tokens.size() != cfg.vocab_size) {
    throw std::runtime_error("checkpoint: vocab list size " +
                             std::to_string(vocab_tokens.size()) + " does not match config " +
                             std::to_string(cfg.vocab_size));
  }
  return Checkpoint{std::move(model), std::move(vocab_tokens),
                    doc.value("tokenizer_mode", "word")};
}

double evaluate_ce(const LmModel& model, const corpus::Corpus& corpus, corpus::Split split) {
  const auto& cfg = model.config();
  const auto ws = corpus::windows(corpus, split, cfg.ctx_len, cfg.ctx_len);
  if (ws.empty()) {
    throw std::invalid_argument("evaluate_ce: split '" + corpus::to_string(split) +
                                "' yields no windows at ctx_len " + std::to_string(cfg.ctx_len));
  }
  double nll_sum = 0.0;
  std::size_t positions = 0;
  for (const auto& w : ws) {
    const Matrix logits = forward(model, w.inputs);
    for (std::size_t t = 0; t < w.targets.size(); ++t) {
      nll_sum += row_lse(logits, t) - logits(t, static_cast<std::size_t>(w.targets[t]));
    }
    positions += w.targets.size();
  }
  return nll_sum / static_cast<double>(positions);
}

void run_training(LmModel& model, const corpus::Corpus& corpus,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  const auto& cfg = model.config();
  const std::size_t stride = cfg.train_stride == 0 ? cfg.ctx_len : cfg.train_stride;
  const auto train_windows = corpus::windows(corpus, corpus::Split::kTrain, cfg.ctx_len, stride);
  if (train_windows.empty()) {
    throw std::invalid_argument("run_training: no training windows; corpus documents shorter "
                                "than ctx_len + 1 tokens");
  }
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + epoch);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
    }
    double nll_weighted = 0.0;
    double sep_sum = 0.0;
    std::size_t positions = 0;
    std::size_t batches = 0;
    std::vector<corpus::Window> batch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_windows[order[i]]);
      const StepStats stats = train_step(model, batch);
      std::size_t batch_positions = 0;
      for (const auto& w : batch) batch_positions += w.targets.size();
      nll_weighted += stats.ce * static_cast<double>(batch_positions);
      positions += batch_positions;
      sep_sum += stats.sep;
      ++batches;
    }
    EpochStats es;
    es.epoch = epoch;
    es.ce_train = nll_weighted / static_cast<double>(positions);
    es.ce_valid = evaluate_ce(model, corpus, corpus::Split::kValid);
    es.sep_loss = sep_sum / static_cast<double>(batches);
    es.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_epoch) on_epoch(es);
  }
}

}  // namespace seplab::lm
