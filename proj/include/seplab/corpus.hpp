#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace seplab::corpus {

inline constexpr int kUnkId = 0;
inline constexpr int kBosId = 1;
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kBosToken = "<bos>";

enum class TokenizerMode { kWord, kChar };
TokenizerMode tokenizer_mode_from_string(const std::string& s);
std::string to_string(TokenizerMode m);

// Byte offset of the first invalid UTF-8 byte, or std::string::npos when the
// whole buffer is valid.
std::size_t utf8_invalid_at(const std::string& text);

// word mode: lowercase ASCII, whitespace-separated, ASCII punctuation split
// off as single-character tokens. char mode: one token per code point,
// whitespace included. Throws std::invalid_argument with the byte offset on
// malformed UTF-8.
std::vector<std::string> tokenize(const std::string& text, TokenizerMode mode);

struct Vocab {
  std::vector<std::string> tokens;            // index == id
  std::vector<std::uint64_t> freqs;           // aligned with tokens
  std::unordered_map<std::string, int> ids;

  std::size_t size() const { return tokens.size(); }
  int lookup(const std::string& token) const;  // kUnkId when absent
  const std::string& lookup(int id) const;     // throws on out-of-range id
};

// Tokens with frequency >= min_freq, ordered by (frequency desc, token asc)
// after the reserved <unk>/<bos> ids.
Vocab build_vocab(const std::vector<std::vector<std::string>>& docs, std::uint64_t min_freq);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

enum class Split { kTrain, kValid, kTest };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

// Seeded Fisher-Yates shuffle of document indices, then, in shuffled order,
// the first n - floor(0.1 n) - (n - floor(0.9 n)) documents train, the next
// floor(0.1 n) valid, the final n - floor(0.9 n) test. Fractional leftovers
// land in train.
std::vector<Split> split_corpus(std::size_t n_docs, std::uint64_t seed);

struct Document {
  std::string name;        // file name relative to the input directory
  std::uint64_t hash = 0;  // FNV-1a 64 of the raw bytes
  Split split = Split::kTrain;
  std::vector<int> ids;    // token ids, no BOS prefix
};

struct Corpus {
  std::string input_dir;
  TokenizerMode mode = TokenizerMode::kWord;
  std::uint64_t seed = 0;
  std::uint64_t min_freq = 1;
  Vocab vocab;
  std::vector<Document> docs;
  std::vector<std::string> warnings;
};

// Reads every .txt file under `input_dir` (sorted by name), tokenizes,
// builds the vocabulary over all documents and assigns splits.
Corpus build_corpus(const std::string& input_dir, TokenizerMode mode, std::uint64_t min_freq,
                    std::uint64_t seed);

// corpus.json plus vocab.tsv under `out_dir`.
void save_corpus(const Corpus& corpus, const std::string& out_dir);

// Reads the manifest, reloads the referenced text files and re-encodes them,
// verifying recorded hashes.
Corpus load_corpus(const std::string& manifest_dir);

struct Window {
  std::vector<int> inputs;   // ctx_len ids
  std::vector<int> targets;  // ids shifted by one
};

// BOS-prefixed documents sliced into fixed-length windows with next-token
// targets; the final ragged window is dropped.
std::vector<Window> windows(const Corpus& corpus, Split split, std::size_t ctx_len,
                            std::size_t stride);

std::vector<int> encode(const Vocab& vocab, const std::vector<std::string>& tokens);
std::vector<std::string> decode(const Vocab& vocab, const std::vector<int>& ids);

std::uint64_t fnv1a64(const std::string& bytes);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace seplab::corpus
