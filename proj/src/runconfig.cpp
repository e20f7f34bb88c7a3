#include "seplab/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "seplab/corpus.hpp"

namespace seplab::cfg {

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = {
      {"input_dir", &RunConfig::input_dir, "raw .txt directory (prepare input)"},
      {"corpus_dir", &RunConfig::corpus_dir, "prepared corpus directory (manifest + vocab)"},
      {"out_dir", &RunConfig::out_dir, "output directory"},
      {"lexicon", &RunConfig::lexicon, "sentiment lexicon file (token<TAB>score)"},
      {"dataset_tag", &RunConfig::dataset_tag, "report dataset key (default: corpus dir name)"},
      {"tokenizer_mode", &RunConfig::tokenizer_mode, "word or char"},
      {"min_freq", &RunConfig::min_freq, "vocabulary frequency threshold"},
      {"d_model", &RunConfig::d_model, "embedding width"},
      {"n_layers", &RunConfig::n_layers, "decoder blocks"},
      {"n_heads", &RunConfig::n_heads, "attention heads"},
      {"ctx_len", &RunConfig::ctx_len, "context window length"},
      {"lr", &RunConfig::lr, "learning rate"},
      {"batch_size", &RunConfig::batch_size, "windows per optimizer step"},
      {"epochs", &RunConfig::epochs, "training epochs"},
      {"seed", &RunConfig::seed, "RNG seed for init, splits, sampling"},
      {"optimizer", &RunConfig::optimizer, "adam or sgd"},
      {"train_stride", &RunConfig::train_stride, "window stride for training (0 = ctx_len)"},
      {"sep_mode", &RunConfig::sep_mode, "off, structured, or continuous"},
      {"sep_k", &RunConfig::sep_k, "context-weighting resolution depth K"},
      {"sep_lambda", &RunConfig::sep_lambda, "smoothness penalty coefficient"},
      {"sep_mu", &RunConfig::sep_mu, "dual-objective mixing weight"},
      {"sep_init_eps", &RunConfig::sep_init_eps, "scale of the near-identity init noise"},
      {"sep_activation", &RunConfig::sep_activation, "tanh, relu, or identity"},
      {"split", &RunConfig::split, "evaluation split: train, valid, or test"},
      {"eval_prompts", &RunConfig::eval_prompts, "generations per evaluation"},
      {"eval_prompt_tokens", &RunConfig::eval_prompt_tokens, "prompt tokens per generation"},
      {"eval_max_new", &RunConfig::eval_max_new, "max generated tokens per response"},
      {"eval_temperature", &RunConfig::eval_temperature, "sampling temperature for eval"},
      {"pmi_top_n", &RunConfig::pmi_top_n, "top types for PMI coherence"},
      {"pmi_window", &RunConfig::pmi_window, "PMI co-occurrence window"},
      {"latency_repeats", &RunConfig::latency_repeats, "timing repeats (median taken)"},
      {"clock", &RunConfig::clock, "latency clock: real or fixed (deterministic)"},
      {"prompt", &RunConfig::prompt, "generation prompt text"},
      {"max_new", &RunConfig::max_new, "tokens to generate"},
      {"temperature", &RunConfig::temperature, "sampling temperature (0 = greedy)"},
      {"threads", &RunConfig::threads, "matmul kernel threads (1 = serial reference)"},
  };
  return table;
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
    throw std::invalid_argument("config key '" + key + "': '" + value +
                                "' is not a nonnegative integer");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': '" + value + "' is not a number");
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void apply_key_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& entry : key_table()) {
    if (key != entry.key) continue;
    if (const auto* sp = std::get_if<std::string RunConfig::*>(&entry.field)) {
      config.**sp = value;
    } else if (const auto* up = std::get_if<std::uint64_t RunConfig::*>(&entry.field)) {
      config.**up = parse_u64(key, value);
    } else {
      config.*std::get<double RunConfig::*>(entry.field) = parse_double(key, value);
    }
    return;
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("malformed JSON config: ") + e.what());
    }
    for (const auto& [key, value] : doc.items()) {
      if (value.is_string()) {
        apply_key_value(config, key, value.get<std::string>());
      } else if (value.is_number_integer() || value.is_number_unsigned()) {
        apply_key_value(config, key, std::to_string(value.get<std::uint64_t>()));
      } else if (value.is_number_float()) {
        apply_key_value(config, key, format_double(value.get<double>()));
      } else {
        throw std::invalid_argument("config key '" + key + "': unsupported JSON value type");
      }
    }
    return config;
  }
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key=value, got '" + stripped + "'");
    }
    apply_key_value(config, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return config;
}

RunConfig load_config_file(const std::string& path) {
  return parse_config(corpus::read_file(path));
}

std::string serialize(const RunConfig& config) {
  std::ostringstream out;
  for (const auto& entry : key_table()) {
    out << entry.key << " = ";
    if (const auto* sp = std::get_if<std::string RunConfig::*>(&entry.field)) {
      out << config.**sp;
    } else if (const auto* up = std::get_if<std::uint64_t RunConfig::*>(&entry.field)) {
      out << config.**up;
    } else {
      out << format_double(config.*std::get<double RunConfig::*>(entry.field));
    }
    out << '\n';
  }
  return out.str();
}

std::string config_hash(const RunConfig& config) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(corpus::fnv1a64(serialize(config))));
  return hex;
}

}  // namespace seplab::cfg
