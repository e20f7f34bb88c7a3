#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seplab/corpus.hpp"
#include "seplab/matrix.hpp"
#include "seplab/sep.hpp"

namespace seplab::lm {

// Raised when training produces non-finite values; the CLI maps it to the
// numerical-failure exit code.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LmConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ctx_len = 128;
  std::size_t vocab_size = 0;  // from corpus
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 3;
  std::uint64_t seed = 42;
  std::string optimizer = "adam";  // adam|sgd
  std::size_t train_stride = 0;    // 0 means ctx_len

  sep::Mode sep_mode = sep::Mode::kOff;
  std::size_t sep_k = 3;
  double sep_lambda = 0.001;
  double sep_mu = 0.1;
  double sep_init_eps = 0.01;
  sep::Activation sep_activation = sep::Activation::kTanh;

  void validate() const;  // throws std::invalid_argument
};

// One named tensor with its gradient slot and Adam moments.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;
  Param(std::string n, Matrix val)
      : name(std::move(n)),
        value(std::move(val)),
        grad(value.rows(), value.cols()),
        m(value.rows(), value.cols()),
        v(value.rows(), value.cols()) {}
};

class LmModel {
 public:
  explicit LmModel(const LmConfig& cfg);

  const LmConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& param(const std::string& name);
  const Param& param(const std::string& name) const;

  // Projection parameters assembled into the sep-core state type.
  sep::ProjectionState sep_state() const;

  void zero_grads();
  std::uint64_t adam_step_count = 0;

 private:
  LmConfig cfg_;
  std::vector<Param> params_;
};

// Attention probabilities and output distribution collected for inspection.
struct ForwardTrace {
  std::vector<Matrix> attention;  // one T x T matrix per (layer, head)
};

// Causal forward pass: logits with shape len x vocab_size. Throws on an
// overlong sequence or out-of-range token id.
Matrix forward(const LmModel& model, std::span<const int> tokens, ForwardTrace* trace = nullptr);

// Mean token-level negative log-likelihood, natural log.
double loss(const Matrix& logits, std::span<const int> targets);

struct StepStats {
  double total = 0.0;
  double ce = 0.0;
  double sep = 0.0;
};

// Computes the dual-objective loss over a batch of windows and accumulates
// parameter gradients (grads are zeroed first). No optimizer update.
StepStats batch_loss_and_grads(LmModel& model, std::span<const corpus::Window> batch);

// batch_loss_and_grads plus one optimizer update over every parameter.
StepStats train_step(LmModel& model, std::span<const corpus::Window> batch);

// Autoregressive sampling. temperature == 0 is greedy argmax with ties broken
// by the lowest token id. Returns prompt followed by generated ids.
std::vector<int> generate(const LmModel& model, std::span<const int> prompt, std::size_t max_new,
                          double temperature, std::uint64_t seed);

// The checkpoint carries the vocabulary and tokenizer mode so a saved model
// is usable for generation on its own.
struct Checkpoint {
  LmModel model;
  std::vector<std::string> vocab;
  std::string tokenizer_mode;
};

void save_checkpoint(const LmModel& model, const std::vector<std::string>& vocab_tokens,
                     const std::string& tokenizer_mode, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct EpochStats {
  std::size_t epoch = 0;
  double ce_train = 0.0;
  double ce_valid = 0.0;
  double sep_loss = 0.0;
  double wall_seconds = 0.0;
};

// Mean NLL over every window of the split (stride = ctx_len).
double evaluate_ce(const LmModel& model, const corpus::Corpus& corpus, corpus::Split split);

// Full training loop over config().epochs epochs; window order is reshuffled
// deterministically from the seed each epoch. The callback fires per epoch.
void run_training(LmModel& model, const corpus::Corpus& corpus,
                  const std::function<void(const EpochStats&)>& on_epoch);

}  // namespace seplab::lm
