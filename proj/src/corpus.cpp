#include "seplab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace seplab::corpus {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

TokenizerMode tokenizer_mode_from_string(const std::string& s) {
  if (s == "word") return TokenizerMode::kWord;
  if (s == "char") return TokenizerMode::kChar;
  throw std::invalid_argument("unknown tokenizer mode '" + s + "' (expected word|char)");
}

std::string to_string(TokenizerMode m) {
  return m == TokenizerMode::kWord ? "word" : "char";
}

std::size_t utf8_invalid_at(const std::string& text) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(text.data());
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char b = bytes[i];
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (b < 0x80) {
      ++i;
      continue;
    } else if ((b & 0xE0) == 0xC0) {
      len = 2;
      cp = b & 0x1F;
    } else if ((b & 0xF0) == 0xE0) {
      len = 3;
      cp = b & 0x0F;
    } else if ((b & 0xF8) == 0xF0) {
      len = 4;
      cp = b & 0x07;
    } else {
      return i;
    }
    if (i + len > n) return i;
    for (std::size_t k = 1; k < len; ++k) {
      if ((bytes[i + k] & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (bytes[i + k] & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
                          (len == 4 && cp < 0x10000);
    const bool surrogate = cp >= 0xD800 && cp <= 0xDFFF;
    if (overlong || surrogate || cp > 0x10FFFF) return i;
    i += len;
  }
  return std::string::npos;
}

namespace {

void require_valid_utf8(const std::string& text) {
  const std::size_t bad = utf8_invalid_at(text);
  if (bad != std::string::npos) {
    throw std::invalid_argument("invalid UTF-8 at byte offset " + std::to_string(bad));
  }
}

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

std::vector<std::string> tokenize_word(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(current);
      current.clear();
    }
  };
  for (const char ch : text) {
    const auto b = static_cast<unsigned char>(ch);
    if (b < 0x80 && is_ascii_space(b)) {
      flush();
    } else if (is_ascii_punct(b)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(b < 0x80 ? static_cast<char>(std::tolower(b)) : ch);
    }
  }
  flush();
  return out;
}

std::vector<std::string> tokenize_char(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((b & 0xE0) == 0xC0) len = 2;
    else if ((b & 0xF0) == 0xE0) len = 3;
    else if ((b & 0xF8) == 0xF0) len = 4;
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string escape_token(const std::string& token) {
  std::string out;
  for (char c : token) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_token(const std::string& text) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\\' || i + 1 == text.size()) {
      out.push_back(text[i]);
      continue;
    }
    ++i;
    switch (text[i]) {
      case '\\': out.push_back('\\'); break;
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      default: out.push_back(text[i]);
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text, TokenizerMode mode) {
  require_valid_utf8(text);
  return mode == TokenizerMode::kWord ? tokenize_word(text) : tokenize_char(text);
}

int Vocab::lookup(const std::string& token) const {
  const auto it = ids.find(token);
  return it == ids.end() ? kUnkId : it->second;
}

const std::string& Vocab::lookup(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens.size()) {
    throw std::out_of_range("Vocab: id " + std::to_string(id) + " out of range (size " +
                            std::to_string(tokens.size()) + ")");
  }
  return tokens[static_cast<std::size_t>(id)];
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& docs, std::uint64_t min_freq) {
  if (docs.empty()) throw std::invalid_argument("build_vocab: no documents");
  std::map<std::string, std::uint64_t> counts;  // ordered map pins tie order
  for (const auto& doc : docs) {
    for (const auto& tok : doc) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (const auto& [tok, freq] : counts) {
    if (freq >= min_freq) kept.emplace_back(tok, freq);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  vocab.tokens = {kUnkToken, kBosToken};
  vocab.freqs = {0, 0};
  for (const auto& [tok, freq] : kept) {
    vocab.ids[tok] = static_cast<int>(vocab.tokens.size());
    vocab.tokens.push_back(tok);
    vocab.freqs.push_back(freq);
  }
  vocab.ids[kUnkToken] = kUnkId;
  vocab.ids[kBosToken] = kBosId;
  return vocab;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ostringstream out;
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    out << escape_token(vocab.tokens[i]) << '\t' << vocab.freqs[i] << '\n';
  }
  write_file(path, out.str());
}

Vocab load_vocab(const std::string& path) {
  const std::string content = read_file(path);
  Vocab vocab;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    const std::string line = content.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("load_vocab: malformed line in " + path);
    }
    vocab.tokens.push_back(unescape_token(line.substr(0, tab)));
    vocab.freqs.push_back(std::stoull(line.substr(tab + 1)));
  }
  if (vocab.tokens.size() < 2 || vocab.tokens[0] != kUnkToken || vocab.tokens[1] != kBosToken) {
    throw std::runtime_error("load_vocab: reserved ids missing in " + path);
  }
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    vocab.ids[vocab.tokens[i]] = static_cast<int>(i);
  }
  return vocab;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "' (expected train|valid|test)");
}

std::vector<Split> split_corpus(std::size_t n_docs, std::uint64_t seed) {
  if (n_docs == 0) throw std::invalid_argument("split_corpus: zero documents");
  std::vector<std::size_t> order(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) order[i] = i;
  // Hand-rolled Fisher-Yates; std::shuffle's draw sequence is unspecified.
  std::mt19937_64 gen(seed);
  for (std::size_t i = n_docs - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(gen() % (i + 1));
    std::swap(order[i], order[j]);
  }
  const std::size_t test_boundary = n_docs * 9 / 10;      // floor(0.9 n)
  const std::size_t valid_count = n_docs / 10;            // floor(0.1 n)
  const std::size_t train_count = test_boundary - valid_count;
  std::vector<Split> assignment(n_docs, Split::kTrain);
  for (std::size_t pos = 0; pos < n_docs; ++pos) {
    Split s = Split::kTrain;
    if (pos >= test_boundary) {
      s = Split::kTest;
    } else if (pos >= train_count) {
      s = Split::kValid;
    }
    assignment[order[pos]] = s;
  }
  return assignment;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw std::runtime_error("read failed: " + path);
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

std::vector<std::string> list_text_files(const std::string& input_dir) {
  if (!fs::is_directory(input_dir)) {
    throw std::invalid_argument("input directory not found: " + input_dir);
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(input_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) {
    throw std::invalid_argument("no .txt files in input directory: " + input_dir);
  }
  return names;
}

}  // namespace

Corpus build_corpus(const std::string& input_dir, TokenizerMode mode, std::uint64_t min_freq,
                    std::uint64_t seed) {
  Corpus corpus;
  corpus.input_dir = input_dir;
  corpus.mode = mode;
  corpus.seed = seed;
  corpus.min_freq = min_freq;

  const auto names = list_text_files(input_dir);
  std::vector<std::vector<std::string>> token_docs;
  token_docs.reserve(names.size());
  for (const auto& name : names) {
    const std::string path = (fs::path(input_dir) / name).string();
    const std::string text = read_file(path);
    Document doc;
    doc.name = name;
    doc.hash = fnv1a64(text);
    try {
      token_docs.push_back(tokenize(text, mode));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(name + ": " + e.what());
    }
    corpus.docs.push_back(std::move(doc));
  }
  if (names.size() < 10) {
    corpus.warnings.push_back("only " + std::to_string(names.size()) +
                              " documents; splits below the recommended minimum of 10");
  }
  corpus.vocab = build_vocab(token_docs, min_freq);
  const auto assignment = split_corpus(names.size(), seed);
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    corpus.docs[i].split = assignment[i];
    corpus.docs[i].ids = encode(corpus.vocab, token_docs[i]);
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& out_dir) {
  fs::create_directories(out_dir);
  save_vocab(corpus.vocab, (fs::path(out_dir) / "vocab.tsv").string());
  ordered_json manifest;
  manifest["format"] = "sep-lab/corpus/1";
  manifest["input_dir"] = corpus.input_dir;
  manifest["tokenizer_mode"] = to_string(corpus.mode);
  manifest["seed"] = corpus.seed;
  manifest["min_freq"] = corpus.min_freq;
  manifest["vocab_file"] = "vocab.tsv";
  ordered_json files = ordered_json::array();
  char hex[17];
  for (const auto& doc : corpus.docs) {
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(doc.hash));
    ordered_json j;
    j["name"] = doc.name;
    j["hash"] = hex;
    j["split"] = to_string(doc.split);
    j["tokens"] = doc.ids.size();
    files.push_back(std::move(j));
  }
  manifest["files"] = std::move(files);
  write_file((fs::path(out_dir) / "corpus.json").string(), manifest.dump(2) + "\n");
}

Corpus load_corpus(const std::string& manifest_dir) {
  const std::string manifest_path = (fs::path(manifest_dir) / "corpus.json").string();
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed corpus manifest " + manifest_path + ": " + e.what());
  }
  if (manifest.value("format", "") != "sep-lab/corpus/1") {
    throw std::runtime_error("unsupported corpus manifest format in " + manifest_path);
  }
  Corpus corpus;
  corpus.input_dir = manifest.at("input_dir").get<std::string>();
  corpus.mode = tokenizer_mode_from_string(manifest.at("tokenizer_mode").get<std::string>());
  corpus.seed = manifest.at("seed").get<std::uint64_t>();
  corpus.min_freq = manifest.at("min_freq").get<std::uint64_t>();
  corpus.vocab = load_vocab(
      (fs::path(manifest_dir) / manifest.at("vocab_file").get<std::string>()).string());
  for (const auto& entry : manifest.at("files")) {
    Document doc;
    doc.name = entry.at("name").get<std::string>();
    doc.split = split_from_string(entry.at("split").get<std::string>());
    const std::string text = read_file((fs::path(corpus.input_dir) / doc.name).string());
    doc.hash = fnv1a64(text);
    const std::string recorded = entry.at("hash").get<std::string>();
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(doc.hash));
    if (recorded != hex) {
      throw std::runtime_error("corpus file changed since prepare: " + doc.name);
    }
    doc.ids = encode(corpus.vocab, tokenize(text, corpus.mode));
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

std::vector<Window> windows(const Corpus& corpus, Split split, std::size_t ctx_len,
                            std::size_t stride) {
  if (ctx_len < 2) throw std::invalid_argument("windows: ctx_len must be >= 2");
  if (stride == 0) throw std::invalid_argument("windows: stride must be positive");
  std::vector<Window> out;
  for (const auto& doc : corpus.docs) {
    if (doc.split != split) continue;
    std::vector<int> seq;
    seq.reserve(doc.ids.size() + 1);
    seq.push_back(kBosId);
    seq.insert(seq.end(), doc.ids.begin(), doc.ids.end());
    for (std::size_t start = 0; start + ctx_len + 1 <= seq.size(); start += stride) {
      Window w;
      w.inputs.assign(seq.begin() + start, seq.begin() + start + ctx_len);
      w.targets.assign(seq.begin() + start + 1, seq.begin() + start + ctx_len + 1);
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::vector<int> encode(const Vocab& vocab, const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) ids.push_back(vocab.lookup(tok));
  return ids;
}

std::vector<std::string> decode(const Vocab& vocab, const std::vector<int>& ids) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (const int id : ids) tokens.push_back(vocab.lookup(id));
  return tokens;
}

}  // namespace seplab::corpus
