// seplab command line: prepare | train | eval | generate | compare.
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "seplab/corpus.hpp"
#include "seplab/kernels.hpp"
#include "seplab/lm.hpp"
#include "seplab/metrics.hpp"
#include "seplab/runconfig.hpp"

namespace fs = std::filesystem;
using namespace seplab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Per-subcommand override collector: every config key becomes a --key flag
// (with a dashed variant, plus any short aliases a command defines).
// Provided flags win over the --config file.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;

  void attach(CLI::App* cmd, const std::map<std::string, std::string>& aliases = {}) {
    cmd->add_option("--config", config_path, "config file (key=value lines or a JSON object)");
    for (const auto& entry : cfg::key_table()) {
      std::string names = "--" + std::string(entry.key);
      std::string dashed = entry.key;
      for (auto& c : dashed) {
        if (c == '_') c = '-';
      }
      if (dashed != entry.key) names += ",--" + dashed;
      if (const auto it = aliases.find(entry.key); it != aliases.end()) {
        names += ",--" + it->second;
      }
      options[entry.key] = cmd->add_option(names, values[entry.key], entry.help);
    }
  }

  cfg::RunConfig resolve() const {
    cfg::RunConfig config;
    if (!config_path.empty()) config = cfg::load_config_file(config_path);
    for (const auto& [key, option] : options) {
      if (option->count() > 0) cfg::apply_key_value(config, key, values.at(key));
    }
    return config;
  }
};

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

std::string dir_basename(const std::string& dir) {
  fs::path p = fs::path(dir).lexically_normal();
  if (!p.has_filename()) p = p.parent_path();
  const std::string name = p.filename().string();
  return name.empty() ? dir : name;
}

void write_resolved_config(const cfg::RunConfig& config, const std::string& out_dir) {
  corpus::write_file((fs::path(out_dir) / "config.resolved").string(), cfg::serialize(config));
}

lm::LmConfig to_lm_config(const cfg::RunConfig& c, std::size_t vocab_size) {
  lm::LmConfig m;
  m.d_model = c.d_model;
  m.n_layers = c.n_layers;
  m.n_heads = c.n_heads;
  m.ctx_len = c.ctx_len;
  m.vocab_size = vocab_size;
  m.lr = c.lr;
  m.batch_size = c.batch_size;
  m.epochs = c.epochs;
  m.seed = c.seed;
  m.optimizer = c.optimizer;
  m.train_stride = c.train_stride;
  m.sep_mode = sep::mode_from_string(c.sep_mode);
  m.sep_k = c.sep_k;
  m.sep_lambda = c.sep_lambda;
  m.sep_mu = c.sep_mu;
  m.sep_init_eps = c.sep_init_eps;
  m.sep_activation = sep::activation_from_string(c.sep_activation);
  m.validate();
  return m;
}

int cmd_prepare(const cfg::RunConfig& config) {
  require(!config.input_dir.empty(), "prepare: --input DIR is required");
  require(!config.out_dir.empty(), "prepare: --out DIR is required");
  const auto mode = corpus::tokenizer_mode_from_string(config.tokenizer_mode);
  const corpus::Corpus built =
      corpus::build_corpus(config.input_dir, mode, config.min_freq, config.seed);
  for (const auto& w : built.warnings) std::cerr << "warning: " << w << "\n";
  corpus::save_corpus(built, config.out_dir);
  write_resolved_config(config, config.out_dir);
  std::size_t train = 0, valid = 0, test = 0;
  for (const auto& d : built.docs) {
    if (d.split == corpus::Split::kTrain) ++train;
    if (d.split == corpus::Split::kValid) ++valid;
    if (d.split == corpus::Split::kTest) ++test;
  }
  std::cout << "prepared " << built.docs.size() << " documents (train " << train << ", valid "
            << valid << ", test " << test << "), vocab " << built.vocab.size() << " -> "
            << config.out_dir << "\n";
  return kExitOk;
}

int cmd_train(const cfg::RunConfig& config) {
  require(!config.corpus_dir.empty(), "train: --corpus DIR (prepared corpus) is required");
  require(!config.out_dir.empty(), "train: --out DIR is required");
  set_kernel_threads(static_cast<int>(config.threads));
  const corpus::Corpus data = corpus::load_corpus(config.corpus_dir);
  const lm::LmConfig model_cfg = to_lm_config(config, data.vocab.size());
  lm::LmModel model(model_cfg);

  fs::create_directories(config.out_dir);
  write_resolved_config(config, config.out_dir);
  std::ofstream log((fs::path(config.out_dir) / "train_log.csv").string());
  require(static_cast<bool>(log), "train: cannot write train_log.csv in " + config.out_dir);
  log << "epoch,ce_train,ce_valid,sep_loss,wall_seconds\n";
  lm::run_training(model, data, [&](const lm::EpochStats& es) {
    log << es.epoch << ',' << format_double(es.ce_train) << ',' << format_double(es.ce_valid)
        << ',' << format_double(es.sep_loss) << ',' << format_double(es.wall_seconds) << "\n";
    log.flush();
    std::cerr << "epoch " << es.epoch << ": ce_train " << es.ce_train << ", ce_valid "
              << es.ce_valid << ", sep " << es.sep_loss << " (" << es.wall_seconds << "s)\n";
  });
  const std::string ckpt = (fs::path(config.out_dir) / "checkpoint.json").string();
  lm::save_checkpoint(model, data.vocab.tokens, corpus::to_string(data.mode), ckpt);
  std::cout << "trained " << config.epochs << " epochs (sep_mode " << config.sep_mode
            << ") -> " << ckpt << "\n";
  return kExitOk;
}

int cmd_eval(const cfg::RunConfig& config, const std::string& model_path,
             const std::string& out_file) {
  require(!model_path.empty(), "eval: --model CKPT is required");
  require(!config.corpus_dir.empty(), "eval: --corpus DIR (prepared corpus) is required");
  require(!out_file.empty(), "eval: --out FILE is required");
  set_kernel_threads(static_cast<int>(config.threads));
  lm::Checkpoint ckpt = lm::load_checkpoint(model_path);
  const corpus::Corpus data = corpus::load_corpus(config.corpus_dir);
  require(ckpt.vocab == data.vocab.tokens,
          "eval: vocabulary mismatch between checkpoint and corpus (" +
              std::to_string(ckpt.vocab.size()) + " vs " +
              std::to_string(data.vocab.size()) + " tokens)");

  metrics::EvalOptions opts;
  opts.split = corpus::split_from_string(config.split);
  opts.model_tag = ckpt.model.config().sep_mode == sep::Mode::kOff
                       ? "baseline"
                       : "sep-" + sep::to_string(ckpt.model.config().sep_mode);
  opts.dataset_tag =
      config.dataset_tag.empty() ? dir_basename(config.corpus_dir) : config.dataset_tag;
  opts.seed = config.seed;
  opts.n_prompts = config.eval_prompts;
  opts.prompt_tokens = config.eval_prompt_tokens;
  opts.max_new = config.eval_max_new;
  opts.temperature = config.eval_temperature;
  opts.pmi_top_n = config.pmi_top_n;
  opts.pmi_window = config.pmi_window;
  opts.latency_repeats = config.latency_repeats;
  if (config.clock == "fixed") {
    // Synthetic deterministic clock: 1 ms per forward pass.
    opts.clock = metrics::fixed_advance_clock_ns(1000000);
  } else {
    require(config.clock == "real", "eval: clock must be 'real' or 'fixed'");
  }
  metrics::Lexicon lexicon;
  if (!config.lexicon.empty()) {
    lexicon = metrics::load_lexicon(config.lexicon);
    opts.lexicon = &lexicon;
  }

  metrics::MetricReport report;
  report.seed = config.seed;
  report.config_hash = cfg::config_hash(config);
  report.timestamp = metrics::report_timestamp();
  if (config.lexicon.empty()) {
    report.warnings.push_back("no lexicon given; sentiment column left absent");
  }
  report.rows.push_back(metrics::evaluate_model(ckpt.model, data, opts, &report.warnings));
  metrics::save_report(report, out_file);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  const auto& row = report.rows.front();
  std::cout << "eval " << row.model_tag << " on " << row.dataset_tag << ": perplexity "
            << (row.perplexity ? format_double(*row.perplexity) : "-") << ", ms/token "
            << (row.ms_per_token ? format_double(*row.ms_per_token) : "-") << ", ttr "
            << (row.ttr ? format_double(*row.ttr) : "-") << ", pmi "
            << (row.pmi_coherence ? format_double(*row.pmi_coherence) : "-") << ", sentiment "
            << (row.sentiment ? format_double(*row.sentiment) : "-") << ", avg_len "
            << (row.avg_len ? format_double(*row.avg_len) : "-") << "\n";
  return kExitOk;
}

int cmd_generate(const cfg::RunConfig& config, const std::string& model_path) {
  require(!model_path.empty(), "generate: --model CKPT is required");
  require(!config.prompt.empty(), "generate: --prompt TEXT is required");
  set_kernel_threads(static_cast<int>(config.threads));
  lm::Checkpoint ckpt = lm::load_checkpoint(model_path);
  const auto mode = corpus::tokenizer_mode_from_string(ckpt.tokenizer_mode);
  corpus::Vocab vocab;
  vocab.tokens = ckpt.vocab;
  vocab.freqs.assign(vocab.tokens.size(), 0);
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    vocab.ids[vocab.tokens[i]] = static_cast<int>(i);
  }
  const auto prompt_tokens = corpus::tokenize(config.prompt, mode);
  std::vector<int> prompt_ids = {corpus::kBosId};
  for (const int id : corpus::encode(vocab, prompt_tokens)) prompt_ids.push_back(id);

  const auto seq =
      lm::generate(ckpt.model, prompt_ids, config.max_new, config.temperature, config.seed);
  const std::vector<int> without_bos(seq.begin() + 1, seq.end());
  const auto decoded = corpus::decode(vocab, without_bos);
  std::string text;
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    if (mode == corpus::TokenizerMode::kWord && i > 0) text += ' ';
    text += decoded[i];
  }
  std::cout << text << "\n";
  std::cout << "generated_tokens: " << (seq.size() - prompt_ids.size()) << "\n";
  return kExitOk;
}

int cmd_compare(const cfg::RunConfig& config, const std::string& baseline_path,
                const std::string& sep_path) {
  require(!baseline_path.empty(), "compare: --baseline REPORT is required");
  require(!sep_path.empty(), "compare: --sep REPORT is required");
  require(!config.out_dir.empty(), "compare: --out DIR is required");
  const metrics::MetricReport baseline = metrics::load_report(baseline_path);
  const metrics::MetricReport sep_report = metrics::load_report(sep_path);
  const metrics::Comparison cmp = metrics::compare(baseline, sep_report);
  fs::create_directories(config.out_dir);
  write_resolved_config(config, config.out_dir);
  corpus::write_file((fs::path(config.out_dir) / "comparison.csv").string(),
                     metrics::comparison_to_csv(cmp));
  corpus::write_file((fs::path(config.out_dir) / "comparison.json").string(),
                     metrics::comparison_to_json(cmp));
  const std::string summary = metrics::comparison_summary(cmp);
  corpus::write_file((fs::path(config.out_dir) / "summary.txt").string(), summary);
  std::cout << summary;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sep-lab: a desk-scale laboratory for structured embedding projection"};
  app.require_subcommand(1);

  ConfigFlags prepare_flags, train_flags, eval_flags, generate_flags, compare_flags;
  std::string eval_model, eval_out, generate_model, compare_baseline, compare_sep;

  CLI::App* prepare = app.add_subcommand("prepare", "tokenize a text directory and split it");
  prepare_flags.attach(prepare, {{"input_dir", "input"},
                                 {"out_dir", "out"},
                                 {"tokenizer_mode", "mode"}});

  CLI::App* train = app.add_subcommand("train", "train a model on a prepared corpus");
  train_flags.attach(train, {{"sep_mode", "sep"},
                             {"corpus_dir", "corpus"},
                             {"out_dir", "out"}});

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint and write a metric report");
  eval_flags.attach(eval, {{"corpus_dir", "corpus"}});
  eval->add_option("--model", eval_model, "checkpoint file");
  eval->add_option("--out", eval_out, "report file base (writes .csv and .json)");

  CLI::App* generate = app.add_subcommand("generate", "sample text from a checkpoint");
  generate_flags.attach(generate);
  generate->add_option("--model", generate_model, "checkpoint file");

  CLI::App* compare = app.add_subcommand("compare", "baseline-vs-SEP comparison tables");
  compare_flags.attach(compare, {{"out_dir", "out"}});
  compare->add_option("--baseline", compare_baseline, "baseline metric report (.json or .csv)");
  compare->add_option("--sep", compare_sep, "SEP metric report (.json or .csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(prepare_flags.resolve());
    if (train->parsed()) return cmd_train(train_flags.resolve());
    if (eval->parsed()) return cmd_eval(eval_flags.resolve(), eval_model, eval_out);
    if (generate->parsed()) return cmd_generate(generate_flags.resolve(), generate_model);
    if (compare->parsed()) {
      return cmd_compare(compare_flags.resolve(), compare_baseline, compare_sep);
    }
  } catch (const lm::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
