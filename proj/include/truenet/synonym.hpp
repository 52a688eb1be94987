#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "truenet/text.hpp"

namespace truenet {

// Lookup table V mapping each vocabulary id to its synonym ids. Entries never
// contain the key itself, specials or stopwords; stopword keys stay empty.
struct SynonymTable {
  enum class Source { lexicon, embedding, file };

  Source source = Source::file;
  std::vector<std::vector<int32_t>> entries;  // indexed by id, sorted ascending
  std::vector<uint8_t> stopword;              // indexed by id
  double coverage = 0.0;                      // non-special, non-stopword ids with a non-empty entry

  int32_t vocab_size() const { return static_cast<int32_t>(entries.size()); }
  bool empty_entry(int32_t id) const;
  // true iff predicted is in V[gold]
  bool contains(int32_t gold, int32_t predicted) const;
  const std::vector<int32_t>& entry(int32_t id) const;
  void check_invariants() const;
};

std::unordered_set<std::string> load_stopwords(const std::string& path);

// Rows are `word<TAB>syn1,syn2,...`. Entries keep only in-vocab synonyms and
// drop the word itself, specials and stopwords. With symmetrize, g in V[p]
// implies p in V[g] for non-stopword pairs.
SynonymTable build_from_lexicon(const std::string& lexicon_path, const Vocabulary& vocab,
                                const std::string& stopwords_path, bool symmetrize = false);

// Rows are `word v1 ... vd`. Entry = k nearest in-vocab words by cosine
// similarity, excluding self and stopwords; cosine ties break on the token
// string ascending.
SynonymTable build_from_embeddings(const std::string& embedding_path, const Vocabulary& vocab,
                                   const std::string& stopwords_path, int k = 10);

struct CoverageReport {
  double coverage = 0.0;
  int64_t eligible_ids = 0;  // non-special, non-stopword
  int64_t covered_ids = 0;
  double mean_entry_size = 0.0;  // over eligible ids
  int64_t max_entry_size = 0;
  std::vector<int64_t> size_histogram;  // index = entry size, capped at 32
};

CoverageReport coverage_stats(const SynonymTable& table, const Vocabulary& vocab);

// `#syn-table v1` header, then one `id<TAB>id,id,...` row per non-empty entry.
void save_table(const SynonymTable& table, const std::string& path);
SynonymTable load_table(const std::string& path, const Vocabulary& vocab,
                        const std::string& stopwords_path = "");

}  // namespace truenet
