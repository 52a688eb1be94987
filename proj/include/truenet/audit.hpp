#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "truenet/synonym.hpp"
#include "truenet/text.hpp"
#include "truenet/trainer.hpp"

namespace truenet {

// Counters for the false-negative severity audit. Prediction-level has two
// readings in circulation, so both ratios are reported.
struct CorrectionStats {
  int64_t total_sequences = 0;
  int64_t sequences_with_correction = 0;
  int64_t total_masked_predictions = 0;
  int64_t mismatched_predictions = 0;
  int64_t corrected_predictions = 0;

  double iteration_level_pct() const;
  double prediction_level_pct_of_mismatched() const;
  double prediction_level_pct_of_masked() const;
  void check_identities() const;
  nlohmann::json to_json() const;
  bool operator==(const CorrectionStats&) const = default;
};

// Predictions for every masked position of a batch, aligned with
// masked_flat(). Model-backed or rigged for tests.
using Predictor = std::function<std::vector<int32_t>(const MaskedBatch&)>;

Predictor predictor_from_checkpoint(const std::string& checkpoint_path);

// Masks the corpus deterministically, runs the predictor, aggregates the
// correction counters. When dump_tsv_path is non-empty, every judgement is
// dumped as `seq_idx<TAB>pos<TAB>gold<TAB>pred<TAB>corrected(0|1)` so an
// external recount can verify the stats.
CorrectionStats audit(const Predictor& predictor, const std::string& corpus_path, const Vocabulary& vocab,
                      const SynonymTable& table, double mask_ratio, uint64_t seed, int max_len,
                      const std::string& dump_tsv_path = "");

CorrectionStats audit_checkpoint(const std::string& checkpoint_path, const std::string& corpus_path,
                                 const SynonymTable& table, double mask_ratio, uint64_t seed,
                                 const std::string& dump_tsv_path = "");

// One replacement decision per eligible token (in vocab, non-empty synonym
// entry): with probability swap_prob the token is swapped for a uniformly
// chosen synonym. Line and per-line token counts are preserved.
struct SwapChange {
  int64_t line = 0;
  int32_t pos = 0;
  std::string from, to;
};
struct SwapResult {
  int64_t lines = 0;
  int64_t eligible_tokens = 0;
  int64_t changed_tokens = 0;
  std::vector<SwapChange> changes;
};
SwapResult swap_syn_transform(const std::string& corpus_in, const std::string& corpus_out, const SynonymTable& table,
                              const Vocabulary& vocab, double swap_prob, uint64_t seed);

// Ori. -> Trans. comparison on the mask-fill task over parallel corpora.
struct RobustnessReport {
  EvalMetrics original;
  EvalMetrics transformed;
  double delta_exact_match = 0;
  double delta_synonym_credit = 0;
  double delta_mean_loss = 0;
  nlohmann::json to_json() const;
};
RobustnessReport robustness_delta(const std::string& checkpoint_path, const std::string& corpus_path,
                                  const std::string& transformed_path, const SynonymTable* table, double mask_ratio,
                                  uint64_t seed);

}  // namespace truenet
