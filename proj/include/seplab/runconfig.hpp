#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace seplab::cfg {

// Every run-time knob in one flat bag. Serialized as key=value lines in a
// fixed order; JSON objects with the same keys are accepted as an
// alternative input format. Unknown keys are rejected.
struct RunConfig {
  // paths
  std::string input_dir;    // raw .txt directory (prepare)
  std::string corpus_dir;   // prepared corpus (manifest directory)
  std::string out_dir;
  std::string lexicon;      // sentiment lexicon path, optional
  std::string dataset_tag;  // report key; defaults to the corpus directory name
  // corpus
  std::string tokenizer_mode = "word";
  std::uint64_t min_freq = 1;
  // model
  std::uint64_t d_model = 64;
  std::uint64_t n_layers = 2;
  std::uint64_t n_heads = 2;
  std::uint64_t ctx_len = 128;
  // training
  double lr = 1e-3;
  std::uint64_t batch_size = 16;
  std::uint64_t epochs = 3;
  std::uint64_t seed = 42;
  std::string optimizer = "adam";
  std::uint64_t train_stride = 0;  // 0 = ctx_len
  // projection
  std::string sep_mode = "off";
  std::uint64_t sep_k = 3;
  double sep_lambda = 0.001;
  double sep_mu = 0.1;
  double sep_init_eps = 0.01;
  std::string sep_activation = "tanh";
  // evaluation
  std::string split = "test";
  std::uint64_t eval_prompts = 16;
  std::uint64_t eval_prompt_tokens = 8;
  std::uint64_t eval_max_new = 64;
  double eval_temperature = 1.0;
  std::uint64_t pmi_top_n = 10;
  std::uint64_t pmi_window = 10;
  std::uint64_t latency_repeats = 5;
  std::string clock = "real";  // real|fixed (fixed: synthetic deterministic clock)
  // generation
  std::string prompt;
  std::uint64_t max_new = 64;
  double temperature = 1.0;
  // kernels
  std::uint64_t threads = 1;
};

using FieldPtr = std::variant<std::string RunConfig::*, std::uint64_t RunConfig::*,
                              double RunConfig::*>;

struct KeyEntry {
  const char* key;
  FieldPtr field;
  const char* help;
};

// The canonical key table, one entry per RunConfig field, fixed order.
const std::vector<KeyEntry>& key_table();

// Throws std::invalid_argument on unknown keys or unparsable values.
void apply_key_value(RunConfig& config, const std::string& key, const std::string& value);

// key=value lines (or a JSON object when the text starts with '{').
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Canonical serialization: one key=value line per table entry.
std::string serialize(const RunConfig& config);

// FNV-1a of the canonical serialization, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace seplab::cfg
