#include "seplab/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace seplab::metrics {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kMetricNames[] = {"perplexity", "ms_per_token",  "ttr",
                                        "pmi_coherence", "sentiment", "avg_len"};

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t codepoint_length(const std::string& token) {
  std::size_t n = 0;
  for (const char c : token) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  }
  return n;
}

const std::optional<double>& cell_by_index(const ReportRow& row, std::size_t i) {
  switch (i) {
    case 0: return row.perplexity;
    case 1: return row.ms_per_token;
    case 2: return row.ttr;
    case 3: return row.pmi_coherence;
    case 4: return row.sentiment;
    default: return row.avg_len;
  }
}

std::optional<double>& cell_by_index(ReportRow& row, std::size_t i) {
  return const_cast<std::optional<double>&>(cell_by_index(static_cast<const ReportRow&>(row), i));
}

}  // namespace

double perplexity(const lm::LmModel& model, const corpus::Corpus& corpus, corpus::Split split) {
  return std::exp(lm::evaluate_ce(model, corpus, split));
}

double ttr(std::span<const int> tokens) {
  if (tokens.empty()) throw std::invalid_argument("ttr: empty token sequence");
  const std::set<int> types(tokens.begin(), tokens.end());
  return static_cast<double>(types.size()) / static_cast<double>(tokens.size());
}

double pmi_coherence(const std::vector<std::vector<std::string>>& docs, std::size_t top_n,
                     std::size_t window, double eps, double floor_value) {
  if (top_n < 2) throw std::invalid_argument("pmi_coherence: top_n must be >= 2");
  if (top_n > 64) throw std::invalid_argument("pmi_coherence: top_n must be <= 64");
  if (window == 0) throw std::invalid_argument("pmi_coherence: window must be positive");

  // Global frequencies of eligible types; std::map pins the lexicographic
  // tie order.
  std::map<std::string, std::uint64_t> freq;
  for (const auto& doc : docs) {
    for (const auto& tok : doc) {
      if (codepoint_length(tok) >= 2) ++freq[tok];
    }
  }
  if (freq.size() < top_n) {
    throw std::invalid_argument("pmi_coherence: only " + std::to_string(freq.size()) +
                                " eligible types, need " + std::to_string(top_n));
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::unordered_map<std::string, std::size_t> top_index;
  for (std::size_t i = 0; i < top_n; ++i) top_index[ranked[i].first] = i;

  // One presence bitmask per sliding window.
  std::uint64_t total_windows = 0;
  std::vector<std::uint64_t> single(top_n, 0);
  std::vector<std::vector<std::uint64_t>> joint(top_n, std::vector<std::uint64_t>(top_n, 0));
  for (const auto& doc : docs) {
    if (doc.empty()) continue;
    const std::size_t w = std::min(window, doc.size());
    const std::size_t n_windows = doc.size() - w + 1;
    for (std::size_t start = 0; start < n_windows; ++start) {
      std::uint64_t mask = 0;
      for (std::size_t t = start; t < start + w; ++t) {
        const auto it = top_index.find(doc[t]);
        if (it != top_index.end()) mask |= 1ULL << it->second;
      }
      ++total_windows;
      for (std::size_t i = 0; i < top_n; ++i) {
        if (!(mask & (1ULL << i))) continue;
        ++single[i];
        for (std::size_t j = i + 1; j < top_n; ++j) {
          if (mask & (1ULL << j)) ++joint[i][j];
        }
      }
    }
  }

  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < top_n; ++i) {
    for (std::size_t j = i + 1; j < top_n; ++j) {
      const double ci = static_cast<double>(single[i]);
      const double cj = static_cast<double>(single[j]);
      const double cij = static_cast<double>(joint[i][j]);
      double value = std::log((cij * static_cast<double>(total_windows) + eps) /
                              (ci * cj + eps));
      if (joint[i][j] == 0) value = std::max(value, floor_value);
      sum += value;
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

Lexicon load_lexicon(const std::string& path) {
  const std::string content = corpus::read_file(path);
  Lexicon lex;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::invalid_argument("lexicon " + path + ": line " + std::to_string(line_no) +
                                  " is not token<TAB>score");
    }
    const std::string token = line.substr(0, tab);
    const double score = std::stod(line.substr(tab + 1));
    if (!(score >= -1.0 && score <= 1.0)) {
      throw std::invalid_argument("lexicon " + path + ": score for '" + token +
                                  "' outside [-1, 1]");
    }
    if (lex.scores.contains(token)) {
      throw std::invalid_argument("lexicon " + path + ": duplicate entry '" + token + "'");
    }
    lex.scores[token] = score;
  }
  return lex;
}

double sentiment_polarity(const std::vector<std::string>& tokens, const Lexicon& lexicon) {
  double sum = 0.0;
  std::size_t matched = 0;
  for (const auto& tok : tokens) {
    const auto it = lexicon.scores.find(tok);
    if (it != lexicon.scores.end()) {
      sum += it->second;
      ++matched;
    }
  }
  return matched == 0 ? 0.0 : sum / static_cast<double>(matched);
}

double avg_response_length(const std::vector<std::vector<int>>& generations) {
  if (generations.empty()) throw std::invalid_argument("avg_response_length: no generations");
  double total = 0.0;
  for (const auto& g : generations) total += static_cast<double>(g.size());
  return total / static_cast<double>(generations.size());
}

ClockFn steady_clock_ns() {
  return [] {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
}

ClockFn fixed_advance_clock_ns(std::int64_t advance_ns) {
  auto counter = std::make_shared<std::int64_t>(0);
  return [counter, advance_ns] {
    *counter += advance_ns;
    return *counter;
  };
}

double latency_per_token_ms(const lm::LmModel& model, const corpus::Corpus& corpus,
                            corpus::Split split, std::size_t repeats, const ClockFn& clock) {
  if (repeats < 3) throw std::invalid_argument("latency_per_token_ms: repeats must be >= 3");
  const auto& cfg = model.config();
  const auto ws = corpus::windows(corpus, split, cfg.ctx_len, cfg.ctx_len);
  if (ws.empty()) {
    throw std::invalid_argument("latency_per_token_ms: split '" + corpus::to_string(split) +
                                "' yields no windows");
  }
  std::size_t total_tokens = 0;
  for (const auto& w : ws) total_tokens += w.inputs.size();

  std::vector<double> per_token_ms(repeats, 0.0);
  for (std::size_t r = 0; r < repeats; ++r) {
    std::int64_t elapsed = 0;
    for (const auto& w : ws) {
      const std::int64_t start = clock();
      const Matrix logits = lm::forward(model, w.inputs);
      elapsed += clock() - start;
      (void)logits;
    }
    per_token_ms[r] = static_cast<double>(elapsed) / 1e6 / static_cast<double>(total_tokens);
  }
  std::sort(per_token_ms.begin(), per_token_ms.end());
  const std::size_t mid = repeats / 2;
  if (repeats % 2 == 1) return per_token_ms[mid];
  return 0.5 * (per_token_ms[mid - 1] + per_token_ms[mid]);
}

std::string report_timestamp() {
  std::time_t t = 0;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  } else {
    t = std::time(nullptr);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string report_to_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "model,dataset,perplexity,ms_per_token,ttr,pmi_coherence,sentiment,avg_len\n";
  for (const auto& row : report.rows) {
    out << row.model_tag << ',' << row.dataset_tag;
    for (std::size_t i = 0; i < 6; ++i) {
      const auto& cell = cell_by_index(row, i);
      out << ',';
      if (cell) out << format_double(*cell);
    }
    out << '\n';
  }
  return out.str();
}

std::string report_to_json(const MetricReport& report) {
  ordered_json doc;
  doc["format"] = "sep-lab/report/1";
  ordered_json meta;
  meta["seed"] = report.seed;
  meta["config_hash"] = report.config_hash;
  meta["timestamp"] = report.timestamp;
  doc["metadata"] = std::move(meta);
  ordered_json rows = ordered_json::array();
  for (const auto& row : report.rows) {
    ordered_json j;
    j["model"] = row.model_tag;
    j["dataset"] = row.dataset_tag;
    for (std::size_t i = 0; i < 6; ++i) {
      const auto& cell = cell_by_index(row, i);
      if (cell) {
        j[kMetricNames[i]] = *cell;
      } else {
        j[kMetricNames[i]] = nullptr;
      }
    }
    rows.push_back(std::move(j));
  }
  doc["rows"] = std::move(rows);
  if (!report.warnings.empty()) doc["warnings"] = report.warnings;
  return doc.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed report JSON: ") + e.what());
  }
  if (doc.value("format", "") != "sep-lab/report/1") {
    throw std::runtime_error("unsupported report format");
  }
  MetricReport report;
  const auto& meta = doc.at("metadata");
  report.seed = meta.at("seed").get<std::uint64_t>();
  report.config_hash = meta.at("config_hash").get<std::string>();
  report.timestamp = meta.at("timestamp").get<std::string>();
  for (const auto& j : doc.at("rows")) {
    ReportRow row;
    row.model_tag = j.at("model").get<std::string>();
    row.dataset_tag = j.at("dataset").get<std::string>();
    for (std::size_t i = 0; i < 6; ++i) {
      const auto& cell = j.at(kMetricNames[i]);
      if (!cell.is_null()) cell_by_index(row, i) = cell.get<double>();
    }
    report.rows.push_back(std::move(row));
  }
  if (doc.contains("warnings")) {
    for (const auto& w : doc.at("warnings")) report.warnings.push_back(w.get<std::string>());
  }
  return report;
}

void save_report(const MetricReport& report, const std::string& base_path) {
  std::string base = base_path;
  for (const char* ext : {".csv", ".json"}) {
    if (base.size() > 4 && base.ends_with(ext)) base.resize(base.size() - std::strlen(ext));
  }
  corpus::write_file(base + ".csv", report_to_csv(report));
  corpus::write_file(base + ".json", report_to_json(report));
}

MetricReport load_report(const std::string& path) {
  std::string json_path = path;
  if (json_path.ends_with(".csv")) {
    json_path = json_path.substr(0, json_path.size() - 4) + ".json";
  }
  return report_from_json(corpus::read_file(json_path));
}

Comparison compare(const MetricReport& baseline, const MetricReport& sep_report) {
  std::map<std::string, const ReportRow*> base_rows;
  for (const auto& r : baseline.rows) base_rows[r.dataset_tag] = &r;
  std::map<std::string, const ReportRow*> sep_rows;
  for (const auto& r : sep_report.rows) sep_rows[r.dataset_tag] = &r;

  std::vector<std::string> missing;
  for (const auto& [tag, row] : base_rows) {
    if (!sep_rows.contains(tag)) missing.push_back("sep:" + tag);
  }
  for (const auto& [tag, row] : sep_rows) {
    if (!base_rows.contains(tag)) missing.push_back("baseline:" + tag);
  }
  if (!missing.empty()) {
    std::string msg = "compare: reports do not cover the same datasets; missing cells:";
    for (const auto& m : missing) msg += " " + m;
    throw std::invalid_argument(msg);
  }

  Comparison cmp;
  cmp.baseline_tag = baseline.rows.empty() ? "baseline" : baseline.rows.front().model_tag;
  cmp.sep_tag = sep_report.rows.empty() ? "sep" : sep_report.rows.front().model_tag;
  for (const auto& [tag, base_row] : base_rows) {
    const ReportRow* sep_row = sep_rows.at(tag);
    ComparisonRow row;
    row.dataset_tag = tag;
    for (std::size_t i = 0; i < 6; ++i) {
      ComparisonCell cell;
      cell.metric = kMetricNames[i];
      cell.baseline = cell_by_index(*base_row, i);
      cell.sep = cell_by_index(*sep_row, i);
      if (cell.baseline && cell.sep && *cell.baseline != 0.0) {
        cell.delta_pct = 100.0 * (*cell.sep - *cell.baseline) / *cell.baseline;
      }
      row.cells.push_back(std::move(cell));
    }
    cmp.rows.push_back(std::move(row));
  }
  return cmp;
}

std::string comparison_to_csv(const Comparison& c) {
  std::ostringstream out;
  out << "dataset";
  for (const char* name : kMetricNames) {
    out << ',' << name << "_baseline," << name << "_sep," << name << "_delta_pct";
  }
  out << '\n';
  for (const auto& row : c.rows) {
    out << row.dataset_tag;
    for (const auto& cell : row.cells) {
      out << ',';
      if (cell.baseline) out << format_double(*cell.baseline);
      out << ',';
      if (cell.sep) out << format_double(*cell.sep);
      out << ',';
      if (cell.delta_pct) out << format_double(*cell.delta_pct);
    }
    out << '\n';
  }
  return out.str();
}

std::string comparison_to_json(const Comparison& c) {
  ordered_json doc;
  doc["format"] = "sep-lab/comparison/1";
  doc["baseline_model"] = c.baseline_tag;
  doc["sep_model"] = c.sep_tag;
  ordered_json rows = ordered_json::array();
  for (const auto& row : c.rows) {
    ordered_json j;
    j["dataset"] = row.dataset_tag;
    for (const auto& cell : row.cells) {
      ordered_json m;
      m["baseline"] = cell.baseline ? ordered_json(*cell.baseline) : ordered_json(nullptr);
      m["sep"] = cell.sep ? ordered_json(*cell.sep) : ordered_json(nullptr);
      m["delta_pct"] = cell.delta_pct ? ordered_json(*cell.delta_pct) : ordered_json(nullptr);
      j[cell.metric] = std::move(m);
    }
    rows.push_back(std::move(j));
  }
  doc["rows"] = std::move(rows);
  return doc.dump(2) + "\n";
}

std::string comparison_summary(const Comparison& c) {
  static const char* kTitles[] = {
      "Perplexity",     "Average inference runtime per token (ms)",
      "Type-token ratio", "Topic coherence (PMI)",
      "Sentiment polarity", "Average response length (tokens)"};
  // Present in the order the tables appear: latency, perplexity, ttr,
  // coherence, sentiment, length.
  static const std::size_t kOrder[] = {1, 0, 2, 3, 4, 5};
  auto brief = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", *v);
    return std::string(buf);
  };
  std::size_t name_width = std::strlen("dataset");
  for (const auto& row : c.rows) name_width = std::max(name_width, row.dataset_tag.size());
  std::ostringstream out;
  for (const std::size_t metric : kOrder) {
    out << "== " << kTitles[metric] << " ==\n";
    char header[160];
    std::snprintf(header, sizeof header, "%-*s  %12s  %12s  %9s\n",
                  static_cast<int>(name_width), "dataset", c.baseline_tag.c_str(),
                  c.sep_tag.c_str(), "delta");
    out << header;
    for (const auto& row : c.rows) {
      const auto& cell = row.cells[metric];
      std::string delta = "-";
      if (cell.delta_pct) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%+.1f%%", *cell.delta_pct);
        delta = buf;
      }
      char line[160];
      std::snprintf(line, sizeof line, "%-*s  %12s  %12s  %9s\n",
                    static_cast<int>(name_width), row.dataset_tag.c_str(),
                    brief(cell.baseline).c_str(), brief(cell.sep).c_str(), delta.c_str());
      out << line;
    }
    out << '\n';
  }
  return out.str();
}

ReportRow evaluate_model(const lm::LmModel& model, const corpus::Corpus& corpus,
                         const EvalOptions& options, std::vector<std::string>* warnings) {
  ReportRow row;
  row.model_tag = options.model_tag;
  row.dataset_tag = options.dataset_tag;
  row.perplexity = perplexity(model, corpus, options.split);
  if (options.measure_latency) {
    row.ms_per_token = latency_per_token_ms(model, corpus, options.split,
                                            options.latency_repeats,
                                            options.clock ? options.clock : steady_clock_ns());
  }

  // Prompts: BOS plus the opening tokens of each split document, cycled
  // until n_prompts generations exist.
  std::vector<const corpus::Document*> split_docs;
  for (const auto& doc : corpus.docs) {
    if (doc.split == options.split && !doc.ids.empty()) split_docs.push_back(&doc);
  }
  if (split_docs.empty()) {
    throw std::invalid_argument("evaluate_model: no nonempty documents in split '" +
                                corpus::to_string(options.split) + "'");
  }
  std::vector<std::vector<int>> generations;  // generated ids, prompt excluded
  for (std::size_t g = 0; g < options.n_prompts; ++g) {
    const corpus::Document* doc = split_docs[g % split_docs.size()];
    std::vector<int> prompt = {corpus::kBosId};
    const std::size_t take = std::min(options.prompt_tokens, doc->ids.size());
    prompt.insert(prompt.end(), doc->ids.begin(), doc->ids.begin() + take);
    const auto seq =
        lm::generate(model, prompt, options.max_new, options.temperature, options.seed + g);
    std::vector<int> generated(seq.begin() + static_cast<long>(prompt.size()), seq.end());
    // An emitted BOS marks the start of a new document: end of the response.
    const auto bos = std::find(generated.begin(), generated.end(), corpus::kBosId);
    generated.erase(bos, generated.end());
    generations.push_back(std::move(generated));
  }

  row.avg_len = avg_response_length(generations);
  std::vector<int> all_ids;
  std::vector<std::vector<std::string>> gen_docs;
  for (const auto& g : generations) {
    all_ids.insert(all_ids.end(), g.begin(), g.end());
    gen_docs.push_back(corpus::decode(corpus.vocab, g));
  }
  if (!all_ids.empty()) {
    row.ttr = ttr(all_ids);
  } else if (warnings) {
    warnings->push_back("ttr: all generations were empty");
  }
  try {
    row.pmi_coherence = pmi_coherence(gen_docs, options.pmi_top_n, options.pmi_window);
  } catch (const std::invalid_argument& e) {
    if (warnings) warnings->push_back(std::string("pmi_coherence unavailable: ") + e.what());
  }
  if (options.lexicon) {
    double sum = 0.0;
    for (const auto& doc : gen_docs) sum += sentiment_polarity(doc, *options.lexicon);
    row.sentiment = sum / static_cast<double>(gen_docs.size());
  }
  return row;
}

}  // namespace seplab::metrics
