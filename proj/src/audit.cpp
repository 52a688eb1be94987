#include "truenet/audit.hpp"

#include <fstream>
#include <stdexcept>

#include "truenet/objectives.hpp"

namespace truenet {

double CorrectionStats::iteration_level_pct() const {
  if (total_sequences == 0) return 0.0;
  return 100.0 * static_cast<double>(sequences_with_correction) / static_cast<double>(total_sequences);
}

double CorrectionStats::prediction_level_pct_of_mismatched() const {
  if (mismatched_predictions == 0) return 0.0;
  return 100.0 * static_cast<double>(corrected_predictions) / static_cast<double>(mismatched_predictions);
}

double CorrectionStats::prediction_level_pct_of_masked() const {
  if (total_masked_predictions == 0) return 0.0;
  return 100.0 * static_cast<double>(corrected_predictions) / static_cast<double>(total_masked_predictions);
}

void CorrectionStats::check_identities() const {
  if (corrected_predictions > mismatched_predictions || mismatched_predictions > total_masked_predictions)
    throw std::logic_error("correction stats: counter ordering violated");
  if (sequences_with_correction > total_sequences)
    throw std::logic_error("correction stats: more correcting sequences than sequences");
}

nlohmann::json CorrectionStats::to_json() const {
  nlohmann::json j;
  j["total_sequences"] = total_sequences;
  j["sequences_with_correction"] = sequences_with_correction;
  j["total_masked_predictions"] = total_masked_predictions;
  j["mismatched_predictions"] = mismatched_predictions;
  j["corrected_predictions"] = corrected_predictions;
  j["iteration_level_pct"] = iteration_level_pct();
  j["prediction_level_pct_of_mismatched"] = prediction_level_pct_of_mismatched();
  j["prediction_level_pct_of_masked"] = prediction_level_pct_of_masked();
  return j;
}

Predictor predictor_from_checkpoint(const std::string& checkpoint_path) {
  auto filler = std::make_shared<MaskFiller>(checkpoint_path);
  return [filler](const MaskedBatch& batch) { return filler->fill(batch).preds; };
}

CorrectionStats audit(const Predictor& predictor, const std::string& corpus_path, const Vocabulary& vocab,
                      const SynonymTable& table, double mask_ratio, uint64_t seed, int max_len,
                      const std::string& dump_tsv_path) {
  if (table.vocab_size() != vocab.size())
    throw std::invalid_argument("audit: synonym table vocab size (" + std::to_string(table.vocab_size()) +
                                ") does not match vocab (" + std::to_string(vocab.size()) + ")");
  std::ofstream dump;
  if (!dump_tsv_path.empty()) {
    dump.open(dump_tsv_path, std::ios::trunc);
    if (!dump) throw std::runtime_error("audit: cannot open '" + dump_tsv_path + "' for writing");
  }

  const std::vector<std::string> lines = read_lines(corpus_path);
  CorrectionStats stats;
  stats.total_sequences = static_cast<int64_t>(lines.size());
  for (const EvalBatch& eb : deterministic_eval_batches(lines, vocab, max_len, mask_ratio, seed)) {
    const std::vector<int32_t> preds = predictor(eb.batch);
    const CorrectionFlags flags = corrections_from_predictions(eb.batch, preds, &table);
    std::vector<uint8_t> seq_corrected(static_cast<size_t>(eb.batch.rows()), 0);
    for (const auto& it : flags.items) {
      ++stats.total_masked_predictions;
      if (it.pred != it.gold) ++stats.mismatched_predictions;
      if (it.corrected) {
        ++stats.corrected_predictions;
        seq_corrected[static_cast<size_t>(it.seq)] = 1;
      }
      if (dump.is_open())
        dump << eb.lines[static_cast<size_t>(it.seq)] << '\t' << it.pos << '\t' << it.gold << '\t' << it.pred << '\t'
             << (it.corrected ? 1 : 0) << '\n';
    }
    for (uint8_t c : seq_corrected) stats.sequences_with_correction += c;
  }
  stats.check_identities();
  return stats;
}

CorrectionStats audit_checkpoint(const std::string& checkpoint_path, const std::string& corpus_path,
                                 const SynonymTable& table, double mask_ratio, uint64_t seed,
                                 const std::string& dump_tsv_path) {
  MaskFiller filler(checkpoint_path);
  Predictor predictor = [&filler](const MaskedBatch& batch) { return filler.fill(batch).preds; };
  return audit(predictor, corpus_path, filler.vocab(), table, mask_ratio, seed, filler.max_len(), dump_tsv_path);
}

SwapResult swap_syn_transform(const std::string& corpus_in, const std::string& corpus_out, const SynonymTable& table,
                              const Vocabulary& vocab, double swap_prob, uint64_t seed) {
  if (swap_prob <= 0.0 || swap_prob > 1.0)
    throw std::invalid_argument("swap transform: swap_prob must be in (0,1]");
  if (table.vocab_size() != vocab.size())
    throw std::invalid_argument("swap transform: table/vocab size mismatch");

  std::ofstream out(corpus_out, std::ios::trunc);
  if (!out) throw std::runtime_error("swap transform: cannot open '" + corpus_out + "' for writing");

  Rng rng = Rng::stream(seed, rng_purpose::kSwap, 0);
  SwapResult res;
  for (const std::string& line : read_lines(corpus_in)) {
    std::vector<std::string> tokens = tokenize(line);
    for (size_t t = 0; t < tokens.size(); ++t) {
      const int32_t id = vocab.lookup(tokens[t]);
      if (Vocabulary::is_special(id) || table.empty_entry(id)) continue;
      ++res.eligible_tokens;
      if (rng.uniform() >= swap_prob) continue;
      const auto& entry = table.entry(id);
      const int32_t pick = entry[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(entry.size())))];
      res.changes.push_back({res.lines, static_cast<int32_t>(t), tokens[t], vocab.token(pick)});
      tokens[t] = vocab.token(pick);
      ++res.changed_tokens;
    }
    for (size_t t = 0; t < tokens.size(); ++t) {
      if (t) out << ' ';
      out << tokens[t];
    }
    out << '\n';
    ++res.lines;
  }
  if (!out) throw std::runtime_error("swap transform: write failed for '" + corpus_out + "'");
  return res;
}

nlohmann::json RobustnessReport::to_json() const {
  nlohmann::json j;
  j["original"] = original.to_json();
  j["transformed"] = transformed.to_json();
  j["delta_exact_match"] = delta_exact_match;
  j["delta_synonym_credit"] = delta_synonym_credit;
  j["delta_mean_loss"] = delta_mean_loss;
  return j;
}

RobustnessReport robustness_delta(const std::string& checkpoint_path, const std::string& corpus_path,
                                  const std::string& transformed_path, const SynonymTable* table, double mask_ratio,
                                  uint64_t seed) {
  const auto n_orig = static_cast<int64_t>(read_lines(corpus_path).size());
  const auto n_trans = static_cast<int64_t>(read_lines(transformed_path).size());
  if (n_orig != n_trans)
    throw std::invalid_argument("robustness: corpora are not parallel (" + std::to_string(n_orig) + " vs " +
                                std::to_string(n_trans) + " lines)");
  RobustnessReport rep;
  rep.original = evaluate_mask_fill(checkpoint_path, corpus_path, table, mask_ratio, seed);
  rep.transformed = evaluate_mask_fill(checkpoint_path, transformed_path, table, mask_ratio, seed);
  rep.delta_exact_match = rep.transformed.exact_match - rep.original.exact_match;
  rep.delta_synonym_credit = rep.transformed.synonym_credit - rep.original.synonym_credit;
  rep.delta_mean_loss = rep.transformed.mean_loss - rep.original.mean_loss;
  return rep;
}

}  // namespace truenet
