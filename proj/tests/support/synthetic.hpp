#pragma once

// Shared fixtures for the unit and acceptance suites: randomized
// (logits, batch, table) instances and the engineered synonym-pair corpus.

#include <string>
#include <vector>

#include "truenet/rng.hpp"
#include "truenet/synonym.hpp"
#include "truenet/tensor.hpp"
#include "truenet/text.hpp"

namespace truenet::testsupport {

// Random masked batch over a [vocab] id space with consistent labels and
// positions; rows get 1..max_masks masked positions.
MaskedBatch random_batch(Rng& rng, int32_t vocab, int32_t rows, int32_t cols, int max_masks = 3);

// Random synonym table: each non-special id gets a (possibly empty) entry.
SynonymTable random_table(Rng& rng, int32_t vocab, double entry_prob = 0.6, int max_entry = 4);

// Random logits aligned with batch.masked_flat().
Tensor<double> random_masked_logits(Rng& rng, const MaskedBatch& batch, int32_t vocab, double scale = 2.0);

// Engineered corpus: `pairs` synonym pairs used interchangeably in identical
// contexts. Every line is "a<p> b<p> syn<p><m> c<p> d<p>" with m drawn 50/50,
// so context determines the pair but never the member.
struct SyntheticCorpus {
  std::string dir;
  std::string corpus_path;
  std::string eval_path;
  std::string vocab_path;
  std::string lexicon_path;
  std::string stopwords_path;
  std::string table_path;
};
SyntheticCorpus make_synonym_corpus(const std::string& dir, int64_t train_lines, int64_t eval_lines, int pairs,
                                    uint64_t seed);

}  // namespace truenet::testsupport
