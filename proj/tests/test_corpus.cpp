#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <unistd.h>

#include "doctest.h"
#include "seplab/corpus.hpp"
#include "seplab/matrix.hpp"

using namespace seplab::corpus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("seplab-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

TEST_CASE("tokenize word mode") {
  CHECK(tokenize("", TokenizerMode::kWord).empty());
  const auto toks = tokenize("A b a.", TokenizerMode::kWord);
  REQUIRE(toks.size() == 4);
  CHECK(toks[0] == "a");
  CHECK(toks[1] == "b");
  CHECK(toks[2] == "a");
  CHECK(toks[3] == ".");
}

TEST_CASE("tokenize word mode matches a character-scan reference") {
  // Build a mixed-punctuation paragraph of ~1 KiB deterministically.
  std::string text;
  const char* pieces[] = {"Hello, world! ", "it's 42%... ", "A-b c_d; ", "(parens) [ok] ",
                          "End.\nNew\tline "};
  while (text.size() < 1024) {
    for (const char* p : pieces) text += p;
  }
  const auto got = tokenize(text, TokenizerMode::kWord);

  // Reference scan: same contract, independent single-pass implementation.
  std::vector<std::string> want;
  std::string cur;
  for (char ch : text) {
    const auto b = static_cast<unsigned char>(ch);
    const bool space = b == ' ' || b == '\t' || b == '\n' || b == '\r' || b == '\f' || b == '\v';
    const bool punct = b < 0x80 && std::ispunct(b);
    if (space || punct) {
      if (!cur.empty()) {
        want.push_back(cur);
        cur.clear();
      }
      if (punct) want.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(b)));
    }
  }
  if (!cur.empty()) want.push_back(cur);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("tokenize char mode splits code points") {
  const auto toks = tokenize("ab\ncd", TokenizerMode::kChar);
  REQUIRE(toks.size() == 5);
  CHECK(toks[2] == "\n");
  const auto utf = tokenize("a\xC3\xA9" "b", TokenizerMode::kChar);  // a, e-acute, b
  REQUIRE(utf.size() == 3);
  CHECK(utf[1] == "\xC3\xA9");
}

TEST_CASE("tokenize rejects invalid UTF-8 with byte offset") {
  std::string bad = "abc";
  bad += static_cast<char>(0xFF);
  CHECK_THROWS_WITH_AS(tokenize(bad, TokenizerMode::kWord), doctest::Contains("offset 3"),
                       std::invalid_argument);
  std::string truncated = "ok\xC3";  // lead byte with missing continuation
  CHECK_THROWS_WITH_AS(tokenize(truncated, TokenizerMode::kChar), doctest::Contains("offset 2"),
                       std::invalid_argument);
}

TEST_CASE("build_vocab ordering and thresholds") {
  const std::vector<std::vector<std::string>> docs = {{"a", "a", "b"}};
  const Vocab v1 = build_vocab(docs, 1);
  REQUIRE(v1.size() == 4);
  CHECK(v1.tokens[0] == kUnkToken);
  CHECK(v1.tokens[1] == kBosToken);
  CHECK(v1.tokens[2] == "a");
  CHECK(v1.tokens[3] == "b");

  const Vocab v2 = build_vocab(docs, 2);
  CHECK(v2.size() == 3);
  CHECK(v2.lookup("b") == kUnkId);
  CHECK(v2.lookup("a") == 2);

  CHECK_THROWS_AS(build_vocab({}, 1), std::invalid_argument);
}

TEST_CASE("build_vocab ties break lexicographically and builds are repeatable") {
  std::vector<std::vector<std::string>> docs;
  seplab::Rng rng(123);
  const char* words[] = {"pear", "apple", "plum", "fig", "date", "lime"};
  for (int d = 0; d < 100; ++d) {
    std::vector<std::string> doc;
    for (int t = 0; t < 30; ++t) doc.push_back(words[rng.uniform_index(6)]);
    docs.push_back(doc);
  }
  const Vocab first = build_vocab(docs, 1);
  for (int rebuild = 0; rebuild < 5; ++rebuild) {
    const Vocab again = build_vocab(docs, 1);
    REQUIRE(again.size() == first.size());
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(again.tokens[i] == first.tokens[i]);
  }
  // Equal-frequency tokens must appear in lexicographic order.
  for (std::size_t i = 3; i < first.size(); ++i) {
    if (first.freqs[i] == first.freqs[i - 1]) CHECK(first.tokens[i - 1] < first.tokens[i]);
  }
}

TEST_CASE("split_corpus proportions and determinism") {
  const auto ten = split_corpus(10, 7);
  std::size_t train = 0, valid = 0, test = 0;
  for (auto s : ten) {
    if (s == Split::kTrain) ++train;
    if (s == Split::kValid) ++valid;
    if (s == Split::kTest) ++test;
  }
  CHECK(train == 8);
  CHECK(valid == 1);
  CHECK(test == 1);

  const auto a = split_corpus(57, 11);
  const auto b = split_corpus(57, 11);
  CHECK(a == b);
  CHECK(split_corpus(57, 12) != a);  // different seed, different shuffle
  CHECK_THROWS_AS(split_corpus(0, 1), std::invalid_argument);
}

TEST_CASE("split_corpus 997 documents follow the floor rule") {
  const auto parts = split_corpus(997, 3);
  // Counting oracle.
  std::size_t train = 0, valid = 0, test = 0;
  for (auto s : parts) {
    if (s == Split::kTrain) ++train;
    if (s == Split::kValid) ++valid;
    if (s == Split::kTest) ++test;
  }
  CHECK(train == 798);
  CHECK(valid == 99);
  CHECK(test == 100);
  // Within one document of 80-10-10 for a sweep of sizes.
  for (std::size_t n : {10, 11, 19, 100, 101, 499, 997}) {
    const auto assignment = split_corpus(n, 5);
    std::size_t tr = 0, va = 0, te = 0;
    for (auto s : assignment) {
      if (s == Split::kTrain) ++tr;
      if (s == Split::kValid) ++va;
      if (s == Split::kTest) ++te;
    }
    CHECK(tr + va + te == n);
    CHECK(std::fabs(static_cast<double>(tr) - 0.8 * n) <= 1.0);
    CHECK(std::fabs(static_cast<double>(va) - 0.1 * n) <= 1.0);
    CHECK(std::fabs(static_cast<double>(te) - 0.1 * n) <= 1.0);
  }
}

TEST_CASE("windows slicing and counts") {
  Corpus corpus;
  corpus.mode = TokenizerMode::kWord;
  Document doc;
  doc.split = Split::kTrain;
  doc.ids = {5, 6, 7, 8, 9};  // 5 ids, BOS-prefixed length 6
  corpus.docs.push_back(doc);

  const auto one = windows(corpus, Split::kTrain, 4, 4);
  REQUIRE(one.size() == 1);
  CHECK(one[0].inputs == std::vector<int>{kBosId, 5, 6, 7});
  CHECK(one[0].targets == std::vector<int>{5, 6, 7, 8});

  const std::size_t len = doc.ids.size();  // L = 5
  const auto slid = windows(corpus, Split::kTrain, 4, 1);
  CHECK(slid.size() == len - 4 + 1);

  CHECK(windows(corpus, Split::kTest, 4, 4).empty());
}

TEST_CASE("encode decode round trip for in-vocabulary text") {
  const std::vector<std::vector<std::string>> docs = {{"the", "cat", "sat", "the", "mat"}};
  const Vocab vocab = build_vocab(docs, 1);
  const auto ids = encode(vocab, docs[0]);
  const auto back = decode(vocab, ids);
  CHECK(back == docs[0]);
}

TEST_CASE("corpus build save load round trip") {
  TempDir input;
  TempDir prepared;
  const char* texts[] = {"The sun rose over the hill.",  "A cat sat on the mat.",
                         "Dogs bark at the moon.",       "Rivers run to the sea.",
                         "Bread and butter for tea.",    "The moon is bright tonight.",
                         "Wind moves the tall grass.",   "Stones roll down the road.",
                         "Rain falls on the roof.",      "The sea is calm today."};
  for (int i = 0; i < 10; ++i) {
    write_file((input.path / ("doc" + std::to_string(i) + ".txt")).string(), texts[i]);
  }
  const Corpus built = build_corpus(input.path.string(), TokenizerMode::kWord, 1, 42);
  CHECK(built.docs.size() == 10);
  CHECK(built.warnings.empty());
  save_corpus(built, prepared.path.string());

  const Corpus loaded = load_corpus(prepared.path.string());
  REQUIRE(loaded.docs.size() == built.docs.size());
  for (std::size_t i = 0; i < built.docs.size(); ++i) {
    CHECK(loaded.docs[i].name == built.docs[i].name);
    CHECK(loaded.docs[i].split == built.docs[i].split);
    CHECK(loaded.docs[i].ids == built.docs[i].ids);
  }
  CHECK(loaded.vocab.tokens == built.vocab.tokens);

  // Rebuilding with the same seed reproduces the manifest byte for byte.
  TempDir prepared2;
  save_corpus(build_corpus(input.path.string(), TokenizerMode::kWord, 1, 42),
              prepared2.path.string());
  CHECK(read_file((prepared.path / "corpus.json").string()) ==
        read_file((prepared2.path / "corpus.json").string()));
  CHECK(read_file((prepared.path / "vocab.tsv").string()) ==
        read_file((prepared2.path / "vocab.tsv").string()));

  // Tampering with a source file is caught on load.
  write_file((input.path / "doc3.txt").string(), "tampered content");
  CHECK_THROWS_WITH_AS(load_corpus(prepared.path.string()), doctest::Contains("doc3.txt"),
                       std::runtime_error);
}

TEST_CASE("vocab file escapes control characters") {
  TempDir dir;
  Vocab vocab;
  vocab.tokens = {kUnkToken, kBosToken, "\t", "\n", "a\\b"};
  vocab.freqs = {0, 0, 3, 2, 1};
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    vocab.ids[vocab.tokens[i]] = static_cast<int>(i);
  }
  const std::string path = (dir.path / "vocab.tsv").string();
  save_vocab(vocab, path);
  const Vocab loaded = load_vocab(path);
  CHECK(loaded.tokens == vocab.tokens);
  CHECK(loaded.freqs == vocab.freqs);
}

TEST_CASE("build_corpus rejects empty directories and bad encodings") {
  TempDir empty;
  CHECK_THROWS_AS(build_corpus(empty.path.string(), TokenizerMode::kWord, 1, 1),
                  std::invalid_argument);

  TempDir bad;
  std::string corrupt = "fine until ";
  corrupt += static_cast<char>(0xC0);  // overlong lead byte
  write_file((bad.path / "broken.txt").string(), corrupt);
  CHECK_THROWS_WITH_AS(build_corpus(bad.path.string(), TokenizerMode::kWord, 1, 1),
                       doctest::Contains("broken.txt"), std::invalid_argument);
}
