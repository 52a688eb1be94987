#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "truenet/model.hpp"
#include "truenet/synonym.hpp"
#include "truenet/tape.hpp"
#include "truenet/text.hpp"

namespace truenet {

enum class Mode { mlm, hc, sr_word, sr_sent, electra, electra_hc, electra_sr };

Mode parse_mode(const std::string& name);
std::string mode_name(Mode mode);
bool is_electra_mode(Mode mode);
bool mode_requires_table(Mode mode);

struct LossWeights {
  double sr = 1.0;
  double kl = 1.0;
  double disc = 50.0;
};

// One record per masked position, in (sequence, position) order — the same
// flattening as MaskedBatch::masked_flat(). corrected means the prediction
// differs from the gold token but sits in its synonym set.
struct CorrectionFlags {
  struct Item {
    int32_t seq = 0;
    int32_t pos = 0;
    int32_t flat_row = 0;
    int32_t gold = 0;
    int32_t pred = 0;
    bool corrected = false;
  };
  std::vector<Item> items;

  int64_t corrected_count() const;
  int64_t uncorrected_count() const { return static_cast<int64_t>(items.size()) - corrected_count(); }
  // active flag per item for the HC loss: 1 iff not corrected
  std::vector<uint8_t> hc_active() const;
};

CorrectionFlags corrections_from_predictions(const MaskedBatch& batch, const std::vector<int32_t>& preds,
                                             const SynonymTable* table);

// preds = argmax at each masked row of `masked_logits` (rows aligned with
// masked_flat()); table == nullptr means no corrections.
template <typename T>
CorrectionFlags compute_corrections(const Tensor<T>& masked_logits, const MaskedBatch& batch,
                                    const SynonymTable* table);

// Mean of -log p(gold | context) over all masked positions; full-sequence
// logits variant with active = (label >= 0).
template <typename T>
Var mlm_loss_full(Tape<T>& tape, Var logits_full, const MaskedBatch& batch);
// Same value computed over pre-gathered masked rows.
template <typename T>
Var mlm_loss_masked(Tape<T>& tape, Var masked_logits, const MaskedBatch& batch);

// Eq. 1 restricted to the uncorrected subset: corrected positions are
// dropped before the loss, so they contribute neither loss nor gradient.
template <typename T>
Var hc_loss_masked(Tape<T>& tape, Var masked_logits, const MaskedBatch& batch, const CorrectionFlags& flags);

// Mean over masked positions of 1 - cos(E[gold], E[pred]). Gradient reaches
// only the selected embedding rows; the argmax choice itself carries none.
template <typename T>
Var sr_word_loss(Tape<T>& tape, Var embedding, const CorrectionFlags& flags);

// KL(softmax(H_pred) || softmax(H_orig)) averaged over non-pad positions,
// where H_pred encodes the prediction-filled sentence and H_orig the
// uncorrupted one.
template <typename T>
Var sr_sentence_loss(Tape<T>& tape, const MlmModel<T>& model, std::span<const Var> p, const MaskedBatch& batch,
                     const CorrectionFlags& flags);

// Configured combination of component losses. Components the mode does not
// use may be left invalid.
struct LossParts {
  Var mlm, hc, sr, kl, gen, disc;
};
template <typename T>
Var combine(Tape<T>& tape, const LossParts& parts, Mode mode, const LossWeights& weights);

// HC adjustment inside ELECTRA: at positions where the generator's argmax is
// a synonym of the gold token, the generator loss skips the position and the
// discriminator label flips to "original". sampled is aligned with
// masked_flat(); disc vectors are flat B*T.
struct ElectraAdjust {
  CorrectionFlags flags;
  std::vector<uint8_t> gen_active;    // per masked row
  std::vector<uint8_t> disc_labels;   // 1 = replaced
  std::vector<uint8_t> disc_active;   // 1 = non-pad position
  std::vector<int32_t> disc_input;    // flat corrupted-for-discriminator ids
};
template <typename T>
ElectraAdjust electra_hc_adjust(const Tensor<T>& gen_masked_logits, const MaskedBatch& batch,
                                const SynonymTable* table, const std::vector<int32_t>& sampled, bool hc_enabled);

// Per-step loss summary: tape handle for the optimizer plus the numbers the
// metrics log records.
template <typename T>
struct LossReport {
  Var total;
  double total_value = 0;
  double mlm = 0, sr = 0, kl = 0, gen = 0, disc = 0;
  int64_t corrected_count = 0, hc_active_count = 0;
  CorrectionFlags flags;
  std::vector<int32_t> sampled;      // ELECTRA only, aligned with masked_flat
  std::vector<uint8_t> disc_labels;  // ELECTRA only
};

// Builds the full loss graph for one step of a non-ELECTRA mode.
template <typename T>
LossReport<T> build_mlm_step(Tape<T>& tape, const MlmModel<T>& model, std::span<const Var> p,
                             const MaskedBatch& batch, const SynonymTable* table, Mode mode,
                             const LossWeights& weights);

// ELECTRA step. Samples replacements from the generator using sample_rng,
// unless fixed_samples (aligned with masked_flat) is provided — gradient
// checks freeze the draw that way.
template <typename T>
LossReport<T> build_electra_step(Tape<T>& tape, const ElectraModel<T>& model, std::span<const Var> p,
                                 const MaskedBatch& batch, const SynonymTable* table, Mode mode,
                                 const LossWeights& weights, Rng* sample_rng,
                                 const std::vector<int32_t>* fixed_samples = nullptr);

extern template CorrectionFlags compute_corrections<float>(const Tensor<float>&, const MaskedBatch&, const SynonymTable*);
extern template CorrectionFlags compute_corrections<double>(const Tensor<double>&, const MaskedBatch&, const SynonymTable*);
extern template Var mlm_loss_full<float>(Tape<float>&, Var, const MaskedBatch&);
extern template Var mlm_loss_full<double>(Tape<double>&, Var, const MaskedBatch&);
extern template Var mlm_loss_masked<float>(Tape<float>&, Var, const MaskedBatch&);
extern template Var mlm_loss_masked<double>(Tape<double>&, Var, const MaskedBatch&);
extern template Var hc_loss_masked<float>(Tape<float>&, Var, const MaskedBatch&, const CorrectionFlags&);
extern template Var hc_loss_masked<double>(Tape<double>&, Var, const MaskedBatch&, const CorrectionFlags&);
extern template Var sr_word_loss<float>(Tape<float>&, Var, const CorrectionFlags&);
extern template Var sr_word_loss<double>(Tape<double>&, Var, const CorrectionFlags&);
extern template Var sr_sentence_loss<float>(Tape<float>&, const MlmModel<float>&, std::span<const Var>,
                                            const MaskedBatch&, const CorrectionFlags&);
extern template Var sr_sentence_loss<double>(Tape<double>&, const MlmModel<double>&, std::span<const Var>,
                                             const MaskedBatch&, const CorrectionFlags&);
extern template Var combine<float>(Tape<float>&, const LossParts&, Mode, const LossWeights&);
extern template Var combine<double>(Tape<double>&, const LossParts&, Mode, const LossWeights&);
extern template ElectraAdjust electra_hc_adjust<float>(const Tensor<float>&, const MaskedBatch&, const SynonymTable*,
                                                       const std::vector<int32_t>&, bool);
extern template ElectraAdjust electra_hc_adjust<double>(const Tensor<double>&, const MaskedBatch&, const SynonymTable*,
                                                        const std::vector<int32_t>&, bool);
extern template struct LossReport<float>;
extern template struct LossReport<double>;
extern template LossReport<float> build_mlm_step<float>(Tape<float>&, const MlmModel<float>&, std::span<const Var>,
                                                        const MaskedBatch&, const SynonymTable*, Mode,
                                                        const LossWeights&);
extern template LossReport<double> build_mlm_step<double>(Tape<double>&, const MlmModel<double>&, std::span<const Var>,
                                                          const MaskedBatch&, const SynonymTable*, Mode,
                                                          const LossWeights&);
extern template LossReport<float> build_electra_step<float>(Tape<float>&, const ElectraModel<float>&,
                                                            std::span<const Var>, const MaskedBatch&,
                                                            const SynonymTable*, Mode, const LossWeights&, Rng*,
                                                            const std::vector<int32_t>*);
extern template LossReport<double> build_electra_step<double>(Tape<double>&, const ElectraModel<double>&,
                                                              std::span<const Var>, const MaskedBatch&,
                                                              const SynonymTable*, Mode, const LossWeights&, Rng*,
                                                              const std::vector<int32_t>*);

}  // namespace truenet
