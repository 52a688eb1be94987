#include "truenet/objectives.hpp"

#include <stdexcept>

namespace truenet {

Mode parse_mode(const std::string& name) {
  if (name == "mlm") return Mode::mlm;
  if (name == "hc") return Mode::hc;
  if (name == "sr_word") return Mode::sr_word;
  if (name == "sr_sent") return Mode::sr_sent;
  if (name == "electra") return Mode::electra;
  if (name == "electra_hc") return Mode::electra_hc;
  if (name == "electra_sr") return Mode::electra_sr;
  throw std::invalid_argument("unknown mode '" + name +
                              "' (expected mlm|hc|sr_word|sr_sent|electra|electra_hc|electra_sr)");
}

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::mlm: return "mlm";
    case Mode::hc: return "hc";
    case Mode::sr_word: return "sr_word";
    case Mode::sr_sent: return "sr_sent";
    case Mode::electra: return "electra";
    case Mode::electra_hc: return "electra_hc";
    case Mode::electra_sr: return "electra_sr";
  }
  throw std::invalid_argument("unknown mode enum value");
}

bool is_electra_mode(Mode mode) {
  return mode == Mode::electra || mode == Mode::electra_hc || mode == Mode::electra_sr;
}

bool mode_requires_table(Mode mode) { return mode == Mode::hc || mode == Mode::electra_hc; }

int64_t CorrectionFlags::corrected_count() const {
  int64_t n = 0;
  for (const auto& it : items) n += it.corrected ? 1 : 0;
  return n;
}

std::vector<uint8_t> CorrectionFlags::hc_active() const {
  std::vector<uint8_t> active(items.size());
  for (size_t i = 0; i < items.size(); ++i) active[i] = items[i].corrected ? 0 : 1;
  return active;
}

CorrectionFlags corrections_from_predictions(const MaskedBatch& batch, const std::vector<int32_t>& preds,
                                             const SynonymTable* table) {
  CorrectionFlags flags;
  size_t i = 0;
  for (int32_t b = 0; b < batch.rows(); ++b) {
    for (int32_t t : batch.mask_positions[static_cast<size_t>(b)]) {
      if (i >= preds.size()) throw std::invalid_argument("corrections: fewer predictions than masked positions");
      CorrectionFlags::Item item;
      item.seq = b;
      item.pos = t;
      item.flat_row = b * batch.cols() + t;
      item.gold = batch.labels.at(b, t);
      item.pred = preds[i++];
      item.corrected = table != nullptr && item.pred != item.gold && table->contains(item.gold, item.pred);
      flags.items.push_back(item);
    }
  }
  if (i != preds.size()) throw std::invalid_argument("corrections: more predictions than masked positions");
  return flags;
}

template <typename T>
CorrectionFlags compute_corrections(const Tensor<T>& masked_logits, const MaskedBatch& batch,
                                    const SynonymTable* table) {
  const int64_t n = batch.masked_total();
  if (masked_logits.rows() != n)
    throw std::invalid_argument("corrections: logits rows (" + std::to_string(masked_logits.rows()) +
                                ") must equal masked positions (" + std::to_string(n) + ")");
  std::vector<int32_t> preds(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) preds[static_cast<size_t>(r)] = predict_at(masked_logits, r);
  return corrections_from_predictions(batch, preds, table);
}

template <typename T>
Var mlm_loss_full(Tape<T>& tape, Var logits_full, const MaskedBatch& batch) {
  const int64_t n = batch.input_ids.numel();
  if (tape.value(logits_full).rows() != n)
    throw std::invalid_argument("mlm_loss: logits rows must equal batch positions");
  std::vector<int32_t> labels(static_cast<size_t>(n), 0);
  std::vector<uint8_t> active(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    const int32_t lab = batch.labels.v[static_cast<size_t>(i)];
    if (lab >= 0) {
      labels[static_cast<size_t>(i)] = lab;
      active[static_cast<size_t>(i)] = 1;
    }
  }
  return tape.cross_entropy_masked(logits_full, std::move(labels), std::move(active));
}

template <typename T>
Var mlm_loss_masked(Tape<T>& tape, Var masked_logits, const MaskedBatch& batch) {
  std::vector<int32_t> labels;
  labels.reserve(static_cast<size_t>(batch.masked_total()));
  for (int32_t b = 0; b < batch.rows(); ++b)
    for (int32_t t : batch.mask_positions[static_cast<size_t>(b)]) labels.push_back(batch.labels.at(b, t));
  std::vector<uint8_t> active(labels.size(), 1);
  return tape.cross_entropy_masked(masked_logits, std::move(labels), std::move(active));
}

template <typename T>
Var hc_loss_masked(Tape<T>& tape, Var masked_logits, const MaskedBatch& batch, const CorrectionFlags& flags) {
  if (static_cast<int64_t>(flags.items.size()) != batch.masked_total())
    throw std::invalid_argument("hc_loss: flags must cover every masked position");
  std::vector<int32_t> labels(flags.items.size());
  for (size_t i = 0; i < flags.items.size(); ++i) labels[i] = flags.items[i].gold;
  return tape.cross_entropy_masked(masked_logits, std::move(labels), flags.hc_active());
}

template <typename T>
Var sr_word_loss(Tape<T>& tape, Var embedding, const CorrectionFlags& flags) {
  if (flags.items.empty()) return tape.leaf(Tensor<T>::scalar(T(0)), false);
  std::vector<int32_t> gold, pred;
  gold.reserve(flags.items.size());
  pred.reserve(flags.items.size());
  for (const auto& it : flags.items) {
    gold.push_back(it.gold);
    pred.push_back(it.pred);
  }
  Var e_gold = tape.gather_rows(embedding, std::move(gold));
  Var e_pred = tape.gather_rows(embedding, std::move(pred));
  Var cos = tape.cosine_rows(e_gold, e_pred);
  return tape.mean_all(tape.affine(cos, T(-1), T(1)));
}

template <typename T>
Var sr_sentence_loss(Tape<T>& tape, const MlmModel<T>& model, std::span<const Var> p, const MaskedBatch& batch,
                     const CorrectionFlags& flags) {
  IdMat predicted = batch.input_ids;
  for (const auto& it : flags.items) predicted.at(it.seq, it.pos) = it.pred;
  IdMat original = batch.input_ids;
  for (int64_t i = 0; i < original.numel(); ++i) {
    const int32_t lab = batch.labels.v[static_cast<size_t>(i)];
    if (lab >= 0) original.v[static_cast<size_t>(i)] = lab;
  }
  Var h_pred = model.forward(tape, p, predicted, batch.attention_len);
  Var h_orig = model.forward(tape, p, original, batch.attention_len);
  std::vector<uint8_t> active(static_cast<size_t>(batch.input_ids.numel()), 0);
  for (int32_t b = 0; b < batch.rows(); ++b)
    for (int32_t t = 0; t < batch.attention_len[static_cast<size_t>(b)] && t < batch.cols(); ++t)
      active[static_cast<size_t>(b) * batch.cols() + t] = 1;
  return tape.kl_divergence(tape.softmax_rows(h_pred), tape.softmax_rows(h_orig), std::move(active));
}

template <typename T>
Var combine(Tape<T>& tape, const LossParts& parts, Mode mode, const LossWeights& weights) {
  auto need = [&](Var v, const char* what) {
    if (!v.valid()) throw std::invalid_argument(std::string("combine: mode ") + mode_name(mode) + " needs " + what);
    return v;
  };
  switch (mode) {
    case Mode::mlm: return need(parts.mlm, "mlm");
    case Mode::hc: return need(parts.hc, "hc");
    case Mode::sr_word:
      return tape.add(need(parts.mlm, "mlm"), tape.affine(need(parts.sr, "sr"), static_cast<T>(weights.sr), T(0)));
    case Mode::sr_sent:
      return tape.add(need(parts.mlm, "mlm"), tape.affine(need(parts.kl, "kl"), static_cast<T>(weights.kl), T(0)));
    case Mode::electra:
    case Mode::electra_hc: {
      Var base = tape.add(need(parts.gen, "gen"), tape.affine(need(parts.disc, "disc"), static_cast<T>(weights.disc), T(0)));
      return base;
    }
    case Mode::electra_sr: {
      Var base = tape.add(need(parts.gen, "gen"), tape.affine(need(parts.disc, "disc"), static_cast<T>(weights.disc), T(0)));
      return tape.add(base, tape.affine(need(parts.sr, "sr"), static_cast<T>(weights.sr), T(0)));
    }
  }
  throw std::invalid_argument("combine: unknown mode");
}

template <typename T>
ElectraAdjust electra_hc_adjust(const Tensor<T>& gen_masked_logits, const MaskedBatch& batch,
                                const SynonymTable* table, const std::vector<int32_t>& sampled, bool hc_enabled) {
  const int64_t n = batch.masked_total();
  if (static_cast<int64_t>(sampled.size()) != n)
    throw std::invalid_argument("electra adjust: sampled ids must cover every masked position");
  ElectraAdjust adj;
  adj.flags = compute_corrections(gen_masked_logits, batch, table);

  const int64_t flat = batch.input_ids.numel();
  adj.disc_input.assign(batch.input_ids.v.begin(), batch.input_ids.v.end());
  adj.disc_labels.assign(static_cast<size_t>(flat), 0);
  adj.disc_active.assign(static_cast<size_t>(flat), 0);
  adj.gen_active.assign(static_cast<size_t>(n), 1);

  for (int32_t b = 0; b < batch.rows(); ++b)
    for (int32_t t = 0; t < batch.attention_len[static_cast<size_t>(b)] && t < batch.cols(); ++t)
      adj.disc_active[static_cast<size_t>(b) * batch.cols() + t] = 1;

  for (size_t i = 0; i < adj.flags.items.size(); ++i) {
    const auto& it = adj.flags.items[i];
    adj.disc_input[static_cast<size_t>(it.flat_row)] = sampled[i];
    // standard ELECTRA label: replaced iff the sampled token differs from gold
    const bool replaced = sampled[i] != it.gold;
    adj.disc_labels[static_cast<size_t>(it.flat_row)] = replaced ? 1 : 0;
    if (hc_enabled && it.corrected) {
      // correction: generator skips the position, discriminator treats it
      // as the original word even when the sampled token differs
      adj.gen_active[i] = 0;
      adj.disc_labels[static_cast<size_t>(it.flat_row)] = 0;
    }
  }
  return adj;
}

template <typename T>
LossReport<T> build_mlm_step(Tape<T>& tape, const MlmModel<T>& model, std::span<const Var> p,
                             const MaskedBatch& batch, const SynonymTable* table, Mode mode,
                             const LossWeights& weights) {
  if (is_electra_mode(mode)) throw std::invalid_argument("build_mlm_step: got an ELECTRA mode");
  LossReport<T> rep;
  Var hidden = model.forward(tape, p, batch.input_ids, batch.attention_len);
  Var masked_logits = model.logits_at(tape, p, hidden, batch.masked_flat());

  rep.flags = compute_corrections(tape.value(masked_logits), batch, table);
  rep.corrected_count = rep.flags.corrected_count();
  rep.hc_active_count = rep.flags.uncorrected_count();

  LossParts parts;
  parts.mlm = mlm_loss_masked(tape, masked_logits, batch);
  rep.mlm = tape.value(parts.mlm).data[0];
  if (mode == Mode::hc) {
    parts.hc = hc_loss_masked(tape, masked_logits, batch, rep.flags);
  } else if (mode == Mode::sr_word) {
    parts.sr = sr_word_loss(tape, p[model.embedding_index()], rep.flags);
    rep.sr = tape.value(parts.sr).data[0];
  } else if (mode == Mode::sr_sent) {
    parts.kl = sr_sentence_loss(tape, model, p, batch, rep.flags);
    rep.kl = tape.value(parts.kl).data[0];
  }
  rep.total = combine(tape, parts, mode, weights);
  rep.total_value = tape.value(rep.total).data[0];
  return rep;
}

template <typename T>
LossReport<T> build_electra_step(Tape<T>& tape, const ElectraModel<T>& model, std::span<const Var> p,
                                 const MaskedBatch& batch, const SynonymTable* table, Mode mode,
                                 const LossWeights& weights, Rng* sample_rng,
                                 const std::vector<int32_t>* fixed_samples) {
  if (!is_electra_mode(mode)) throw std::invalid_argument("build_electra_step: got a non-ELECTRA mode");
  LossReport<T> rep;

  Var gen_logits = model.gen_logits(tape, p, batch.input_ids, batch.attention_len);
  Var gen_masked = tape.gather_rows(gen_logits, batch.masked_flat());
  const Tensor<T>& gen_masked_v = tape.value(gen_masked);

  const int64_t n = batch.masked_total();
  std::vector<int32_t> sampled;
  if (fixed_samples) {
    sampled = *fixed_samples;
  } else {
    if (!sample_rng) throw std::invalid_argument("build_electra_step: need sample_rng or fixed samples");
    sampled.reserve(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) sampled.push_back(sample_at(gen_masked_v, r, *sample_rng));
  }

  ElectraAdjust adj = electra_hc_adjust(gen_masked_v, batch, table, sampled, mode == Mode::electra_hc);
  rep.flags = adj.flags;
  rep.corrected_count = rep.flags.corrected_count();
  rep.hc_active_count = rep.flags.uncorrected_count();
  rep.sampled = std::move(sampled);
  rep.disc_labels = adj.disc_labels;

  std::vector<int32_t> gen_labels(rep.flags.items.size());
  for (size_t i = 0; i < rep.flags.items.size(); ++i) gen_labels[i] = rep.flags.items[i].gold;
  std::vector<uint8_t> gen_active = (mode == Mode::electra_hc)
                                        ? adj.gen_active
                                        : std::vector<uint8_t>(rep.flags.items.size(), 1);

  LossParts parts;
  parts.gen = tape.cross_entropy_masked(gen_masked, std::move(gen_labels), std::move(gen_active));
  rep.gen = tape.value(parts.gen).data[0];
  rep.mlm = rep.gen;  // generator CE is the denoising loss in ELECTRA mode

  IdMat disc_ids(batch.rows(), batch.cols());
  disc_ids.v = adj.disc_input;
  Var disc = model.disc_logits(tape, p, disc_ids, batch.attention_len);
  parts.disc = tape.binary_ce_logits(disc, adj.disc_labels, adj.disc_active);
  rep.disc = tape.value(parts.disc).data[0];

  if (mode == Mode::electra_sr) {
    parts.sr = sr_word_loss(tape, p[model.embedding_index()], rep.flags);
    rep.sr = tape.value(parts.sr).data[0];
  }

  rep.total = combine(tape, parts, mode, weights);
  rep.total_value = tape.value(rep.total).data[0];
  return rep;
}

template CorrectionFlags compute_corrections<float>(const Tensor<float>&, const MaskedBatch&, const SynonymTable*);
template CorrectionFlags compute_corrections<double>(const Tensor<double>&, const MaskedBatch&, const SynonymTable*);
template Var mlm_loss_full<float>(Tape<float>&, Var, const MaskedBatch&);
template Var mlm_loss_full<double>(Tape<double>&, Var, const MaskedBatch&);
template Var mlm_loss_masked<float>(Tape<float>&, Var, const MaskedBatch&);
template Var mlm_loss_masked<double>(Tape<double>&, Var, const MaskedBatch&);
template Var hc_loss_masked<float>(Tape<float>&, Var, const MaskedBatch&, const CorrectionFlags&);
template Var hc_loss_masked<double>(Tape<double>&, Var, const MaskedBatch&, const CorrectionFlags&);
template Var sr_word_loss<float>(Tape<float>&, Var, const CorrectionFlags&);
template Var sr_word_loss<double>(Tape<double>&, Var, const CorrectionFlags&);
template Var sr_sentence_loss<float>(Tape<float>&, const MlmModel<float>&, std::span<const Var>, const MaskedBatch&,
                                     const CorrectionFlags&);
template Var sr_sentence_loss<double>(Tape<double>&, const MlmModel<double>&, std::span<const Var>, const MaskedBatch&,
                                      const CorrectionFlags&);
template Var combine<float>(Tape<float>&, const LossParts&, Mode, const LossWeights&);
template Var combine<double>(Tape<double>&, const LossParts&, Mode, const LossWeights&);
template ElectraAdjust electra_hc_adjust<float>(const Tensor<float>&, const MaskedBatch&, const SynonymTable*,
                                                const std::vector<int32_t>&, bool);
template ElectraAdjust electra_hc_adjust<double>(const Tensor<double>&, const MaskedBatch&, const SynonymTable*,
                                                 const std::vector<int32_t>&, bool);
template struct LossReport<float>;
template struct LossReport<double>;
template LossReport<float> build_mlm_step<float>(Tape<float>&, const MlmModel<float>&, std::span<const Var>,
                                                 const MaskedBatch&, const SynonymTable*, Mode, const LossWeights&);
template LossReport<double> build_mlm_step<double>(Tape<double>&, const MlmModel<double>&, std::span<const Var>,
                                                   const MaskedBatch&, const SynonymTable*, Mode, const LossWeights&);
template LossReport<float> build_electra_step<float>(Tape<float>&, const ElectraModel<float>&, std::span<const Var>,
                                                     const MaskedBatch&, const SynonymTable*, Mode, const LossWeights&,
                                                     Rng*, const std::vector<int32_t>*);
template LossReport<double> build_electra_step<double>(Tape<double>&, const ElectraModel<double>&, std::span<const Var>,
                                                       const MaskedBatch&, const SynonymTable*, Mode,
                                                       const LossWeights&, Rng*, const std::vector<int32_t>*);

}  // namespace truenet
