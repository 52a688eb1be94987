#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "truenet/objectives.hpp"
#include "truenet/synonym.hpp"
#include "truenet/text.hpp"

namespace truenet {

struct TrainConfig {
  std::string mode = "mlm";
  int layers = 4;
  int d_model = 64;
  int heads = 4;
  int max_len = 32;
  int batch_size = 32;
  int64_t steps = 1000;
  double learning_rate = 5e-4;
  int64_t warmup_steps = -1;  // -1 -> 10% of steps
  double mask_ratio = 0.15;
  double p_mask = 0.8, p_random = 0.1, p_keep = 0.1;
  double lambda_sr = 1.0, lambda_kl = 1.0, lambda_disc = 50.0;
  uint64_t seed = 1;
  std::string precision = "f64";  // f64 | f32
  std::string corpus, vocab, synonyms;  // synonyms may be empty
  std::string out_dir = ".";
  int64_t checkpoint_every = 0;  // 0 -> final checkpoint only
  double grad_clip = 1.0;        // 0 disables clipping
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  static TrainConfig from_json(const nlohmann::json& j);  // unknown keys rejected
  static TrainConfig from_json_file(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;
  int64_t resolved_warmup() const;
  CorruptionPolicy policy() const { return {p_mask, p_random, p_keep}; }
  double lr_at(int64_t step) const;  // step is 1-based
};

struct MetricsRow {
  int64_t step = 0;
  double total = 0, mlm = 0, sr = 0, kl = 0;
  int64_t corrected_count = 0, hc_active_count = 0;
  double grad_norm = 0, lr = 0;
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::string final_checkpoint;
  std::vector<MetricsRow> metrics;
};

// Runs cfg.steps Adam updates from scratch: linear warmup then constant rate,
// global-norm clipping, one metrics line per step, checkpoints on schedule.
// A non-finite loss aborts after dumping the offending batch.
TrainResult train(const TrainConfig& cfg);
// Continues a checkpointed run to its configured step count; the trajectory
// matches an uninterrupted run bit for bit.
TrainResult resume_training(const std::string& checkpoint_path);

// Read-only model snapshot for mask-fill evaluation: predictions plus the
// per-position negative log likelihood of the gold token.
class MaskFiller {
 public:
  explicit MaskFiller(const std::string& checkpoint_path);
  const Vocabulary& vocab() const;
  int max_len() const;

  struct Out {
    std::vector<int32_t> preds;  // aligned with batch.masked_flat()
    std::vector<double> nll;
  };
  Out fill(const MaskedBatch& batch) const;

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

// Deterministic per-line masking for evaluation: line i is masked by the
// (seed, line) stream with an all-[MASK] policy, so parallel corpora with
// equal per-line token counts receive identical mask positions.
struct EvalBatch {
  MaskedBatch batch;
  std::vector<int64_t> lines;
};
std::vector<EvalBatch> deterministic_eval_batches(const std::vector<std::string>& lines, const Vocabulary& vocab,
                                                  int max_len, double mask_ratio, uint64_t seed, int batch_size = 32);

struct EvalMetrics {
  double exact_match = 0;
  double synonym_credit = 0;
  double mean_loss = 0;
  int64_t masked = 0;
  int64_t sequences = 0;
  nlohmann::json to_json() const;
};

// Mask-fill accuracy under deterministic masking: exact match, synonym-credit
// (gold or any synonym of it counts) and mean masked-position loss.
EvalMetrics evaluate_mask_fill(const std::string& checkpoint_path, const std::string& corpus_path,
                               const SynonymTable* table, double mask_ratio, uint64_t seed);

// Aggregation core shared with the audit tooling and the fixture tests.
struct MaskFillRecord {
  int64_t line = 0;
  int32_t pos = 0;
  int32_t gold = 0;
  int32_t pred = 0;
  double nll = 0;
};
EvalMetrics metrics_from_records(const std::vector<MaskFillRecord>& records, int64_t sequences,
                                 const SynonymTable* table);

}  // namespace truenet
