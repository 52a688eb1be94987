#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "truenet/synonym.hpp"

using namespace truenet;

namespace {

const std::string kFixtures = std::string(TRUENET_SOURCE_DIR) + "/tests/fixtures";
const std::string kStopwords = std::string(TRUENET_SOURCE_DIR) + "/data/stopwords_en.txt";

std::string write_temp(const std::string& tag, const std::string& content) {
  static int counter = 0;
  const std::string path = "/tmp/truenet_syn_" + tag + "_" + std::to_string(++counter) + ".txt";
  std::ofstream f(path, std::ios::trunc);
  f << content;
  return path;
}

Vocabulary fixture_vocab() {
  return Vocabulary::from_tokens({"primary", "main", "chief", "happy", "glad", "stay", "remain", "fast", "quick",
                                  "speedy", "you", "the", "zzz"});
}

// all-pairs cosine brute force with the same tie rule (cos desc, token asc)
std::vector<int32_t> knn_oracle(const std::vector<std::string>& words, const std::vector<std::vector<double>>& vecs,
                                size_t self, const Vocabulary& vocab, int k) {
  struct S {
    double cos;
    std::string word;
  };
  std::vector<S> scored;
  for (size_t j = 0; j < words.size(); ++j) {
    if (j == self) continue;
    double dot = 0, na = 0, nb = 0;
    for (size_t c = 0; c < vecs[self].size(); ++c) {
      dot += vecs[self][c] * vecs[j][c];
      na += vecs[self][c] * vecs[self][c];
      nb += vecs[j][c] * vecs[j][c];
    }
    scored.push_back({dot / (std::sqrt(na) * std::sqrt(nb)), words[j]});
  }
  std::sort(scored.begin(), scored.end(),
            [](const S& a, const S& b) { return a.cos != b.cos ? a.cos > b.cos : a.word < b.word; });
  std::vector<int32_t> ids;
  for (size_t r = 0; r < scored.size() && r < static_cast<size_t>(k); ++r) ids.push_back(vocab.lookup(scored[r].word));
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

TEST_CASE("lexicon builder: table-1 style entry, misses, stopwords") {
  Vocabulary vocab = fixture_vocab();
  SynonymTable table = build_from_lexicon(kFixtures + "/lexicon_small.tsv", vocab, kStopwords);
  table.check_invariants();

  // the prediction "main" for gold "primary" must be found in V[primary]
  CHECK(table.contains(vocab.lookup("primary"), vocab.lookup("main")));
  CHECK(table.contains(vocab.lookup("primary"), vocab.lookup("chief")));
  // "principal" is not in the vocab, so it cannot appear
  CHECK(table.entry(vocab.lookup("primary")).size() == 2);

  // a vocab word absent from the lexicon gets an empty entry
  CHECK(table.empty_entry(vocab.lookup("zzz")));
  // stopwords stay empty no matter what the lexicon says
  CHECK(table.empty_entry(vocab.lookup("the")));

  // lookup is false for self and for empty entries
  CHECK_FALSE(table.contains(vocab.lookup("primary"), vocab.lookup("primary")));
  CHECK_FALSE(table.contains(vocab.lookup("zzz"), vocab.lookup("main")));
  // gold "you", prediction "happy": unrelated, never corrected ("you" is a stopword)
  CHECK_FALSE(table.contains(vocab.lookup("you"), vocab.lookup("happy")));
}

TEST_CASE("lexicon builder: malformed row reports the line number") {
  Vocabulary vocab = fixture_vocab();
  const std::string bad = write_temp("badlex", "primary\tmain\nrow without a tab\n");
  try {
    build_from_lexicon(bad, vocab, kStopwords);
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::remove(bad.c_str());
}

TEST_CASE("lexicon builder: symmetrize adds reverse edges") {
  Vocabulary vocab = fixture_vocab();
  const std::string lex = write_temp("sym", "happy\tglad\n");
  SynonymTable plain = build_from_lexicon(lex, vocab, kStopwords, false);
  CHECK(plain.contains(vocab.lookup("happy"), vocab.lookup("glad")));
  CHECK_FALSE(plain.contains(vocab.lookup("glad"), vocab.lookup("happy")));

  SynonymTable sym = build_from_lexicon(lex, vocab, kStopwords, true);
  sym.check_invariants();
  CHECK(sym.contains(vocab.lookup("happy"), vocab.lookup("glad")));
  CHECK(sym.contains(vocab.lookup("glad"), vocab.lookup("happy")));
  // full biconditional over the whole table
  for (int32_t g = 0; g < sym.vocab_size(); ++g)
    for (int32_t p : sym.entry(g)) CHECK(sym.contains(p, g));
  std::remove(lex.c_str());
}

TEST_CASE("coverage stats: empty table and fixture hand count") {
  Vocabulary vocab = fixture_vocab();
  SynonymTable empty;
  empty.entries.assign(static_cast<size_t>(vocab.size()), {});
  empty.stopword.assign(static_cast<size_t>(vocab.size()), 0);
  CHECK(coverage_stats(empty, vocab).coverage == 0.0);

  SynonymTable table = build_from_lexicon(kFixtures + "/lexicon_small.tsv", vocab, kStopwords);
  CoverageReport rep = coverage_stats(table, vocab);
  // hand count: 13 non-special ids, "you" and "the" are stopwords -> 11
  // eligible; primary, main, happy, stay, fast, quick have entries -> 6
  CHECK(rep.eligible_ids == 11);
  CHECK(rep.covered_ids == 6);
  CHECK(rep.coverage == doctest::Approx(6.0 / 11.0));
  CHECK(rep.max_entry_size == 2);
  CHECK(table.coverage == doctest::Approx(6.0 / 11.0));
}

TEST_CASE("embedding builder: 5-word toy file matches the all-pairs oracle") {
  const std::vector<std::string> words = {"apple", "banana", "cherry", "date", "elder"};
  const std::vector<std::vector<double>> vecs = {
      {1.0, 0.0, 0.5}, {0.9, 0.1, 0.4}, {-1.0, 0.2, 0.0}, {0.0, 1.0, 1.0}, {0.5, 0.5, 0.5}};
  std::ostringstream file;
  for (size_t i = 0; i < words.size(); ++i) {
    file << words[i];
    for (double x : vecs[i]) file << ' ' << x;
    file << '\n';
  }
  const std::string path = write_temp("emb5", file.str());
  Vocabulary vocab = Vocabulary::from_tokens(words);
  const std::string no_stop = write_temp("nostop", "");

  for (int k = 1; k <= 4; ++k) {
    SynonymTable table = build_from_embeddings(path, vocab, no_stop, k);
    table.check_invariants();
    for (size_t i = 0; i < words.size(); ++i)
      CHECK(table.entry(vocab.lookup(words[i])) == knn_oracle(words, vecs, i, vocab, k));
  }
  std::remove(path.c_str());
  std::remove(no_stop.c_str());
}

TEST_CASE("embedding builder: missing rows, dimension errors, k bound") {
  Vocabulary vocab = Vocabulary::from_tokens({"covered", "uncovered"});
  const std::string no_stop = write_temp("nostop", "");
  const std::string path = write_temp("emb", "covered 1.0 0.0\n");
  SynonymTable table = build_from_embeddings(path, vocab, no_stop, 10);
  CHECK(table.empty_entry(vocab.lookup("uncovered")));
  CHECK(table.empty_entry(vocab.lookup("covered")));  // no other vector to pair with

  const std::string bad = write_temp("embbad", "a 1.0 0.0\nb 1.0\n");
  Vocabulary vocab2 = Vocabulary::from_tokens({"a", "b"});
  CHECK_THROWS_AS(build_from_embeddings(bad, vocab2, no_stop, 10), std::runtime_error);

  CHECK_THROWS_AS(build_from_embeddings(path, vocab, no_stop, 0), std::invalid_argument);
  std::remove(path.c_str());
  std::remove(bad.c_str());
  std::remove(no_stop.c_str());
}

TEST_CASE("embedding entries never exceed k and never contain stopwords") {
  Vocabulary vocab = Vocabulary::from_tokens({"the", "cat", "dog", "fox", "owl", "bat"});
  std::ostringstream file;
  Rng rng(8);
  for (const char* w : {"the", "cat", "dog", "fox", "owl", "bat"}) {
    file << w;
    for (int c = 0; c < 4; ++c) file << ' ' << rng.normal(0, 1);
    file << '\n';
  }
  const std::string path = write_temp("embk", file.str());
  SynonymTable table = build_from_embeddings(path, vocab, kStopwords, 2);
  table.check_invariants();
  for (int32_t id = 0; id < table.vocab_size(); ++id) {
    CHECK(table.entry(id).size() <= 2);
    for (int32_t s : table.entry(id)) CHECK(vocab.token(s) != "the");
  }
  CHECK(table.empty_entry(vocab.lookup("the")));
  std::remove(path.c_str());
}

TEST_CASE("table construction is a pure function of its inputs") {
  Vocabulary vocab = fixture_vocab();
  SynonymTable a = build_from_lexicon(kFixtures + "/lexicon_small.tsv", vocab, kStopwords);
  SynonymTable b = build_from_lexicon(kFixtures + "/lexicon_small.tsv", vocab, kStopwords);
  CHECK(a.entries == b.entries);
  CHECK(a.coverage == b.coverage);
}

TEST_CASE("serialized table round trips and validates its header") {
  Vocabulary vocab = fixture_vocab();
  SynonymTable table = build_from_lexicon(kFixtures + "/lexicon_small.tsv", vocab, kStopwords);
  const std::string path = write_temp("table", "");
  save_table(table, path);

  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "#syn-table v1");

  SynonymTable loaded = load_table(path, vocab, kStopwords);
  CHECK(loaded.entries == table.entries);
  CHECK(loaded.coverage == doctest::Approx(table.coverage));

  const std::string bad = write_temp("tablebad", "not a header\n5\t6\n");
  CHECK_THROWS_AS(load_table(bad, vocab), std::runtime_error);
  std::remove(path.c_str());
  std::remove(bad.c_str());
}
