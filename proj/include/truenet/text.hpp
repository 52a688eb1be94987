#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "truenet/rng.hpp"
#include "truenet/tensor.hpp"

namespace truenet {

// Word-level vocabulary with four reserved specials. Non-special ids start
// at 4 and are assigned by descending frequency, ties broken lexicographically.
struct Vocabulary {
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kCls = 2;
  static constexpr int32_t kMask = 3;
  static constexpr int32_t kNumSpecial = 4;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int32_t> token_to_id;

  Vocabulary();
  static Vocabulary from_tokens(const std::vector<std::string>& ordered_tokens);

  int32_t size() const { return static_cast<int32_t>(id_to_token.size()); }
  int32_t lookup(const std::string& token) const;  // kUnk when absent
  const std::string& token(int32_t id) const;
  static bool is_special(int32_t id) { return id >= 0 && id < kNumSpecial; }

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  // Exact file-format bytes (used to embed the vocab in checkpoints).
  std::string serialize() const;
  static Vocabulary deserialize(const std::string& content);
};

// Lowercased word tokens: runs of [a-z0-9] plus bytes >= 0x80 form words,
// every other non-space byte is its own single-character token.
std::vector<std::string> tokenize(std::string_view line);

// Frequency-ranked vocabulary over a one-sequence-per-line corpus.
Vocabulary build_vocab(const std::string& corpus_path, int min_count, int max_size);

// [CLS] + ids (OOV -> [UNK]), truncated to max_len, padded with [PAD].
std::vector<int32_t> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab, int max_len);
// Tokens for non-pad, non-cls positions.
std::vector<std::string> decode(const std::vector<int32_t>& ids, const Vocabulary& vocab);

struct CorruptionPolicy {
  double p_mask = 0.8;
  double p_random = 0.1;
  double p_keep = 0.1;
  void validate() const;
};

// Corrupted id sequences with their gold labels. labels[b][t] >= 0 exactly
// at the selected positions Y_b; everywhere else the sentinel -1.
struct MaskedBatch {
  IdMat input_ids;
  IdMat labels;
  std::vector<std::vector<int32_t>> mask_positions;
  std::vector<int32_t> attention_len;

  int32_t rows() const { return input_ids.rows; }
  int32_t cols() const { return input_ids.cols; }
  int64_t masked_total() const;
  // Row indices (b * cols + t) of masked positions in (b, t) order; the
  // canonical flattening used by the objectives.
  std::vector<int32_t> masked_flat() const;
  void check_invariants(double mask_ratio) const;
};

// In-place corruption of one encoded row. Selects round(mask_ratio * n)
// eligible positions (non-special ids, position > 0) without replacement,
// then applies the (p_mask, p_random, p_keep) policy to each.
void apply_masking(std::vector<int32_t>& ids, int32_t attn_len, double mask_ratio, const CorruptionPolicy& policy,
                   const Vocabulary& vocab, Rng& rng, std::vector<int32_t>& labels_out,
                   std::vector<int32_t>& positions_out);

// Deterministic masked-batch stream over a corpus: epoch e visits every line
// once in an order shuffled by (seed, e); batch contents are a pure function
// of (seed, step).
class BatchStream {
 public:
  BatchStream(const std::string& corpus_path, const Vocabulary& vocab, int batch_size, int max_len,
              double mask_ratio, CorruptionPolicy policy, uint64_t seed);

  MaskedBatch at(int64_t step) const;
  MaskedBatch next() { return at(counter_++); }

  int64_t batches_per_epoch() const;
  int64_t line_count() const { return static_cast<int64_t>(encoded_.size()); }

 private:
  const Vocabulary& vocab_;
  std::vector<std::vector<int32_t>> encoded_;
  std::vector<int32_t> attn_len_;
  int batch_size_;
  int max_len_;
  double mask_ratio_;
  CorruptionPolicy policy_;
  uint64_t seed_;
  int64_t counter_ = 0;
};

std::vector<std::string> read_lines(const std::string& path);

}  // namespace truenet
