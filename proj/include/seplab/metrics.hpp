#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "seplab/corpus.hpp"
#include "seplab/lm.hpp"

namespace seplab::metrics {

// exp(mean token NLL) over every window of the split, natural log base.
double perplexity(const lm::LmModel& model, const corpus::Corpus& corpus, corpus::Split split);

// Distinct types divided by token count; in (0, 1].
double ttr(std::span<const int> tokens);

// Mean pairwise PMI among the top_n most frequent types of length >= 2
// characters, counted over sliding token windows (stride 1; a document
// shorter than `window` forms a single window). Zero-joint pairs contribute
// ln(eps / (C_i C_j + eps)) floored at `floor_value`.
double pmi_coherence(const std::vector<std::vector<std::string>>& docs, std::size_t top_n = 10,
                     std::size_t window = 10, double eps = 1e-12, double floor_value = -30.0);

struct Lexicon {
  std::unordered_map<std::string, double> scores;  // each in [-1, 1]
};

// token<TAB>score lines. Throws on scores outside [-1, 1] or duplicates.
Lexicon load_lexicon(const std::string& path);

// Mean score over tokens present in the lexicon; 0.0 when nothing matches.
double sentiment_polarity(const std::vector<std::string>& tokens, const Lexicon& lexicon);

// Mean generated-token count (prompts excluded by the caller).
double avg_response_length(const std::vector<std::vector<int>>& generations);

// Nanosecond clock, injectable for deterministic tests. Called immediately
// before and after each window's forward pass.
using ClockFn = std::function<std::int64_t()>;
ClockFn steady_clock_ns();
// Synthetic clock advancing a fixed amount per call; with it, per-token
// latency is advance_ns / ctx_len regardless of corpus size.
ClockFn fixed_advance_clock_ns(std::int64_t advance_ns);

// Median across repeats of (wall time of forward passes over the split /
// total tokens), in milliseconds. Single-threaded; repeats >= 3.
double latency_per_token_ms(const lm::LmModel& model, const corpus::Corpus& corpus,
                            corpus::Split split, std::size_t repeats,
                            const ClockFn& clock = steady_clock_ns());

struct ReportRow {
  std::string model_tag;
  std::string dataset_tag;
  std::optional<double> perplexity;
  std::optional<double> ms_per_token;
  std::optional<double> ttr;
  std::optional<double> pmi_coherence;
  std::optional<double> sentiment;
  std::optional<double> avg_len;
};

struct MetricReport {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string timestamp;
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
};

// ISO-8601 UTC; honors SOURCE_DATE_EPOCH for reproducible output.
std::string report_timestamp();

// CSV columns: model,dataset,perplexity,ms_per_token,ttr,pmi_coherence,
// sentiment,avg_len. Absent cells are empty fields (null in the JSON mirror).
std::string report_to_csv(const MetricReport& report);
std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);

void save_report(const MetricReport& report, const std::string& base_path);
MetricReport load_report(const std::string& path);

struct ComparisonCell {
  std::string metric;
  std::optional<double> baseline;
  std::optional<double> sep;
  std::optional<double> delta_pct;  // 100 * (sep - baseline) / baseline
};

struct ComparisonRow {
  std::string dataset_tag;
  std::vector<ComparisonCell> cells;  // fixed metric order
};

struct Comparison {
  std::string baseline_tag;
  std::string sep_tag;
  std::vector<ComparisonRow> rows;
};

// Pairs the two reports by dataset tag. Throws std::invalid_argument listing
// the missing cells when the keys do not line up.
Comparison compare(const MetricReport& baseline, const MetricReport& sep_report);

std::string comparison_to_csv(const Comparison& c);
std::string comparison_to_json(const Comparison& c);
// Plain-text tables, one section per metric, baseline and SEP side by side.
std::string comparison_summary(const Comparison& c);

struct EvalOptions {
  corpus::Split split = corpus::Split::kTest;
  std::string model_tag;
  std::string dataset_tag;
  std::uint64_t seed = 42;
  std::size_t n_prompts = 16;
  std::size_t prompt_tokens = 8;
  std::size_t max_new = 64;
  double temperature = 1.0;
  std::size_t pmi_top_n = 10;
  std::size_t pmi_window = 10;
  std::size_t latency_repeats = 5;
  bool measure_latency = true;
  ClockFn clock;                    // defaults to the steady clock
  const Lexicon* lexicon = nullptr; // absent -> sentiment cell stays empty
};

// Runs the full per-dataset evaluation: perplexity and latency over the
// split, then seeded generations from split-document prompts for the
// text-quality metrics. Generations stop early at an emitted BOS, which
// marks a document boundary.
ReportRow evaluate_model(const lm::LmModel& model, const corpus::Corpus& corpus,
                         const EvalOptions& options, std::vector<std::string>* warnings);

}  // namespace seplab::metrics
