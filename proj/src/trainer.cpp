#include "truenet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "truenet/checkpoint.hpp"
#include "truenet/logging.hpp"

namespace truenet {

namespace {

const char* kKnownKeys[] = {"mode",      "layers",     "d_model",     "heads",       "max_len",   "batch_size",
                            "steps",     "learning_rate", "warmup_steps", "mask_ratio", "p_mask",   "p_random",
                            "p_keep",    "lambda_sr",  "lambda_kl",   "lambda_disc", "seed",      "precision",
                            "corpus",    "vocab",      "synonyms",    "out_dir",     "checkpoint_every",
                            "grad_clip", "beta1",      "beta2",       "adam_eps"};

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : kKnownKeys)
      if (it.key() == k) known = true;
    if (!known) throw std::invalid_argument("config: unknown key '" + it.key() + "'");
  }
  TrainConfig cfg;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("mode", cfg.mode);
  get("layers", cfg.layers);
  get("d_model", cfg.d_model);
  get("heads", cfg.heads);
  get("max_len", cfg.max_len);
  get("batch_size", cfg.batch_size);
  get("steps", cfg.steps);
  get("learning_rate", cfg.learning_rate);
  get("warmup_steps", cfg.warmup_steps);
  get("mask_ratio", cfg.mask_ratio);
  const bool policy_given = j.contains("p_mask") || j.contains("p_random") || j.contains("p_keep");
  get("p_mask", cfg.p_mask);
  get("p_random", cfg.p_random);
  get("p_keep", cfg.p_keep);
  get("lambda_sr", cfg.lambda_sr);
  get("lambda_kl", cfg.lambda_kl);
  get("lambda_disc", cfg.lambda_disc);
  get("seed", cfg.seed);
  get("precision", cfg.precision);
  get("corpus", cfg.corpus);
  get("vocab", cfg.vocab);
  get("synonyms", cfg.synonyms);
  get("out_dir", cfg.out_dir);
  get("checkpoint_every", cfg.checkpoint_every);
  get("grad_clip", cfg.grad_clip);
  get("beta1", cfg.beta1);
  get("beta2", cfg.beta2);
  get("adam_eps", cfg.adam_eps);
  if (!policy_given && is_electra_mode(parse_mode(cfg.mode))) {
    cfg.p_mask = 1.0;
    cfg.p_random = 0.0;
    cfg.p_keep = 0.0;
  }
  return cfg;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  nlohmann::json j;
  f >> j;
  return from_json(j);
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["layers"] = layers;
  j["d_model"] = d_model;
  j["heads"] = heads;
  j["max_len"] = max_len;
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["learning_rate"] = learning_rate;
  j["warmup_steps"] = warmup_steps;
  j["mask_ratio"] = mask_ratio;
  j["p_mask"] = p_mask;
  j["p_random"] = p_random;
  j["p_keep"] = p_keep;
  j["lambda_sr"] = lambda_sr;
  j["lambda_kl"] = lambda_kl;
  j["lambda_disc"] = lambda_disc;
  j["seed"] = seed;
  j["precision"] = precision;
  j["corpus"] = corpus;
  j["vocab"] = vocab;
  j["synonyms"] = synonyms;
  j["out_dir"] = out_dir;
  j["checkpoint_every"] = checkpoint_every;
  j["grad_clip"] = grad_clip;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  return j;
}

void TrainConfig::validate() const {
  const Mode m = parse_mode(mode);
  if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
  if (mask_ratio <= 0 || mask_ratio >= 1) throw std::invalid_argument("config: mask_ratio must be in (0,1)");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (d_model % heads != 0) throw std::invalid_argument("config: d_model must be divisible by heads");
  if (is_electra_mode(m) && d_model % 4 != 0)
    throw std::invalid_argument("config: ELECTRA modes need d_model divisible by 4");
  if (learning_rate <= 0) throw std::invalid_argument("config: learning_rate must be positive");
  if (precision != "f64" && precision != "f32")
    throw std::invalid_argument("config: precision must be f64 or f32, got '" + precision + "'");
  if (checkpoint_every < 0) throw std::invalid_argument("config: checkpoint_every must be >= 0");
  if (grad_clip < 0) throw std::invalid_argument("config: grad_clip must be >= 0");
  policy().validate();
  if (mode_requires_table(m) && synonyms.empty())
    throw std::invalid_argument("config: mode " + mode + " requires a synonyms table path");
}

int64_t TrainConfig::resolved_warmup() const { return warmup_steps >= 0 ? warmup_steps : steps / 10; }

double TrainConfig::lr_at(int64_t step) const {
  const int64_t w = resolved_warmup();
  if (w > 0 && step <= w) return learning_rate * static_cast<double>(step) / static_cast<double>(w);
  return learning_rate;
}

nlohmann::json MetricsRow::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["total"] = total;
  j["mlm"] = mlm;
  j["sr"] = sr;
  j["kl"] = kl;
  j["corrected_count"] = corrected_count;
  j["hc_active_count"] = hc_active_count;
  j["grad_norm"] = grad_norm;
  j["lr"] = lr;
  return j;
}

nlohmann::json EvalMetrics::to_json() const {
  nlohmann::json j;
  j["exact_match"] = exact_match;
  j["synonym_credit"] = synonym_credit;
  j["mean_loss"] = mean_loss;
  j["masked"] = masked;
  j["sequences"] = sequences;
  return j;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct Engine {
  TrainConfig cfg;
  Mode mode = Mode::mlm;
  Vocabulary vocab;
  std::string vocab_bytes;
  std::optional<SynonymTable> table;
  std::unique_ptr<MlmModel<T>> mlm;
  std::unique_ptr<ElectraModel<T>> electra;
  std::vector<Tensor<T>> adam_m, adam_v;
  int64_t step = 0;  // completed optimizer updates
  Rng root_rng{0};

  ParamStore<T>& store() { return mlm ? mlm->store() : electra->store(); }
  const ParamStore<T>& store() const { return mlm ? mlm->store() : electra->store(); }

  EncoderConfig encoder_config() const {
    EncoderConfig ec;
    ec.layers = cfg.layers;
    ec.d_model = cfg.d_model;
    ec.heads = cfg.heads;
    ec.max_len = cfg.max_len;
    ec.vocab = vocab.size();
    return ec;
  }

  void build_model() {
    const EncoderConfig ec = encoder_config();
    if (is_electra_mode(mode))
      electra = std::make_unique<ElectraModel<T>>(ec, cfg.seed);
    else
      mlm = std::make_unique<MlmModel<T>>(ec, cfg.seed);
    adam_m.clear();
    adam_v.clear();
    for (const Tensor<T>& p : store().values) {
      adam_m.push_back(Tensor<T>::zeros(p.shape));
      adam_v.push_back(Tensor<T>::zeros(p.shape));
    }
  }
};

template <typename T>
Engine<T> make_engine(const TrainConfig& cfg) {
  cfg.validate();
  Engine<T> eng;
  eng.cfg = cfg;
  eng.mode = parse_mode(cfg.mode);
  eng.vocab = Vocabulary::load(cfg.vocab);
  eng.vocab_bytes = eng.vocab.serialize();
  if (!cfg.synonyms.empty()) {
    eng.table = load_table(cfg.synonyms, eng.vocab);
    eng.table->check_invariants();
  }
  eng.root_rng = Rng(cfg.seed);
  eng.build_model();
  return eng;
}

template <typename T>
void save_engine(const Engine<T>& eng, const std::string& path) {
  std::vector<TensorBlob> blobs;
  blobs.push_back(blob_from_string("__meta/config", eng.cfg.to_json().dump()));
  blobs.push_back(blob_from_u64s("__meta/step", {static_cast<uint64_t>(eng.step)}));
  const auto st = eng.root_rng.state();
  blobs.push_back(blob_from_u64s("__meta/rng", {st[0], st[1], st[2], st[3]}));
  blobs.push_back(blob_from_string("__meta/vocab", eng.vocab_bytes));
  const ParamStore<T>& store = eng.store();
  for (size_t i = 0; i < store.size(); ++i)
    blobs.push_back(blob_from_tensor("model/" + store.names[i], store.values[i]));
  for (size_t i = 0; i < store.size(); ++i)
    blobs.push_back(blob_from_tensor("adam/m/" + store.names[i], eng.adam_m[i]));
  for (size_t i = 0; i < store.size(); ++i)
    blobs.push_back(blob_from_tensor("adam/v/" + store.names[i], eng.adam_v[i]));
  write_container(path, blobs);
}

template <typename T>
void load_tensor_checked(const std::vector<TensorBlob>& blobs, const std::string& name, Tensor<T>& dst) {
  const TensorBlob& b = find_blob(blobs, name);
  if (b.shape != dst.shape)
    throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " + shape_str(b.shape) + ", expected " +
                             shape_str(dst.shape));
  dst = tensor_from_blob<T>(b);
}

template <typename T>
Engine<T> load_engine(const std::vector<TensorBlob>& blobs, const TrainConfig& cfg) {
  Engine<T> eng;
  eng.cfg = cfg;
  eng.mode = parse_mode(cfg.mode);
  eng.vocab_bytes = string_from_blob(find_blob(blobs, "__meta/vocab"));
  eng.vocab = Vocabulary::deserialize(eng.vocab_bytes);
  if (!cfg.synonyms.empty()) eng.table = load_table(cfg.synonyms, eng.vocab);
  eng.build_model();
  ParamStore<T>& store = eng.store();
  for (size_t i = 0; i < store.size(); ++i) load_tensor_checked(blobs, "model/" + store.names[i], store.values[i]);
  for (size_t i = 0; i < store.size(); ++i) load_tensor_checked(blobs, "adam/m/" + store.names[i], eng.adam_m[i]);
  for (size_t i = 0; i < store.size(); ++i) load_tensor_checked(blobs, "adam/v/" + store.names[i], eng.adam_v[i]);
  eng.step = static_cast<int64_t>(u64s_from_blob(find_blob(blobs, "__meta/step")).at(0));
  const auto st = u64s_from_blob(find_blob(blobs, "__meta/rng"));
  if (st.size() != 4) throw std::runtime_error("checkpoint: tensor '__meta/rng' must hold 4 words");
  eng.root_rng.set_state({st[0], st[1], st[2], st[3]});
  return eng;
}

template <typename T>
void dump_abort_batch(const TrainConfig& cfg, int64_t step, const MaskedBatch& batch, double loss_value) {
  nlohmann::json j;
  j["step"] = step;
  j["loss"] = loss_value;
  j["rows"] = batch.rows();
  j["cols"] = batch.cols();
  j["input_ids"] = batch.input_ids.v;
  j["labels"] = batch.labels.v;
  j["attention_len"] = batch.attention_len;
  const std::string path = cfg.out_dir + "/abort_batch.json";
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  log_error("non-finite loss at step " + std::to_string(step) + "; offending batch dumped to " + path);
}

template <typename T>
TrainResult run_engine(Engine<T>& eng) {
  const TrainConfig& cfg = eng.cfg;
  std::filesystem::create_directories(cfg.out_dir);
  log_info("train: resolved config " + cfg.to_json().dump());

  BatchStream stream(cfg.corpus, eng.vocab, cfg.batch_size, cfg.max_len, cfg.mask_ratio, cfg.policy(), cfg.seed);
  const std::string metrics_path = cfg.out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path, eng.step > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("train: cannot open '" + metrics_path + "'");

  ParamStore<T>& store = eng.store();
  const SynonymTable* table = eng.table ? &*eng.table : nullptr;
  LossWeights weights{cfg.lambda_sr, cfg.lambda_kl, cfg.lambda_disc};

  TrainResult result;
  for (int64_t i = eng.step; i < cfg.steps; ++i) {
    MaskedBatch batch = stream.at(i);
    Tape<T> tape;
    std::vector<Var> pvars = store.push_all(tape);
    LossReport<T> rep;
    if (is_electra_mode(eng.mode)) {
      Rng sample_rng = Rng::stream(cfg.seed, rng_purpose::kSample, static_cast<uint64_t>(i));
      rep = build_electra_step(tape, *eng.electra, std::span<const Var>(pvars), batch, table, eng.mode, weights,
                               &sample_rng);
    } else {
      rep = build_mlm_step(tape, *eng.mlm, std::span<const Var>(pvars), batch, table, eng.mode, weights);
    }
    if (!std::isfinite(rep.total_value)) {
      dump_abort_batch<T>(cfg, i + 1, batch, rep.total_value);
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(i + 1));
    }
    tape.backward(rep.total);

    std::vector<Tensor<T>> grads;
    grads.reserve(store.size());
    double norm_sq = 0;
    for (Var v : pvars) {
      grads.push_back(tape.grad(v));
      for (T g : grads.back().data) norm_sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double grad_norm = std::sqrt(norm_sq);
    if (!std::isfinite(grad_norm)) {
      dump_abort_batch<T>(cfg, i + 1, batch, rep.total_value);
      throw std::runtime_error("train: non-finite gradient at step " + std::to_string(i + 1));
    }
    if (cfg.grad_clip > 0 && grad_norm > cfg.grad_clip) {
      const T scale = static_cast<T>(cfg.grad_clip / grad_norm);
      for (Tensor<T>& g : grads)
        for (T& x : g.data) x *= scale;
    }

    const int64_t t = i + 1;
    const double lr = cfg.lr_at(t);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T corr1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const T corr2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    const T eps = static_cast<T>(cfg.adam_eps);
    const T lrT = static_cast<T>(lr);
    for (size_t k = 0; k < store.size(); ++k) {
      Tensor<T>& p = store.values[k];
      Tensor<T>& m = eng.adam_m[k];
      Tensor<T>& v = eng.adam_v[k];
      const Tensor<T>& g = grads[k];
      for (size_t x = 0; x < p.data.size(); ++x) {
        m.data[x] = b1 * m.data[x] + (T(1) - b1) * g.data[x];
        v.data[x] = b2 * v.data[x] + (T(1) - b2) * g.data[x] * g.data[x];
        const T mhat = m.data[x] / corr1;
        const T vhat = v.data[x] / corr2;
        p.data[x] -= lrT * mhat / (std::sqrt(vhat) + eps);
      }
    }

    MetricsRow row;
    row.step = t;
    row.total = rep.total_value;
    row.mlm = rep.mlm;
    row.sr = rep.sr;
    row.kl = rep.kl;
    row.corrected_count = rep.corrected_count;
    row.hc_active_count = rep.hc_active_count;
    row.grad_norm = grad_norm;
    row.lr = lr;
    metrics << row.to_json().dump() << "\n";
    result.metrics.push_back(row);
    eng.step = t;

    if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0 && t < cfg.steps)
      save_engine(eng, cfg.out_dir + "/ckpt_step" + std::to_string(t) + ".tnnc");
    if (t % 200 == 0 || t == cfg.steps)
      log_debug("step " + std::to_string(t) + "/" + std::to_string(cfg.steps) + " total=" + std::to_string(row.total));
  }
  metrics.flush();

  result.final_checkpoint = cfg.out_dir + "/ckpt_final.tnnc";
  save_engine(eng, result.final_checkpoint);
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.precision == "f32") {
    Engine<float> eng = make_engine<float>(cfg);
    return run_engine(eng);
  }
  Engine<double> eng = make_engine<double>(cfg);
  return run_engine(eng);
}

TrainResult resume_training(const std::string& checkpoint_path) {
  const std::vector<TensorBlob> blobs = read_container(checkpoint_path);
  const TrainConfig cfg = TrainConfig::from_json(nlohmann::json::parse(string_from_blob(find_blob(blobs, "__meta/config"))));
  cfg.validate();
  if (cfg.precision == "f32") {
    Engine<float> eng = load_engine<float>(blobs, cfg);
    return run_engine(eng);
  }
  Engine<double> eng = load_engine<double>(blobs, cfg);
  return run_engine(eng);
}

// ---------------------------------------------------------------------------

struct MaskFiller::Impl {
  virtual ~Impl() = default;
  virtual Out do_fill(const MaskedBatch& batch) const = 0;
  Vocabulary vocab;
  TrainConfig cfg;
};

namespace {

template <typename T>
struct FillerImpl : MaskFiller::Impl {
  std::unique_ptr<MlmModel<T>> mlm;
  std::unique_ptr<ElectraModel<T>> electra;

  MaskFiller::Out do_fill(const MaskedBatch& batch) const override {
    MaskFiller::Out out;
    const int64_t n = batch.masked_total();
    if (n == 0) return out;
    Tape<T> tape;
    Var masked_logits;
    if (mlm) {
      std::vector<Var> p = mlm->push_params(tape, false);
      Var hidden = mlm->forward(tape, std::span<const Var>(p), batch.input_ids, batch.attention_len);
      masked_logits = mlm->logits_at(tape, std::span<const Var>(p), hidden, batch.masked_flat());
    } else {
      std::vector<Var> p = electra->push_params(tape, false);
      Var logits = electra->gen_logits(tape, std::span<const Var>(p), batch.input_ids, batch.attention_len);
      masked_logits = tape.gather_rows(logits, batch.masked_flat());
    }
    const Tensor<T>& L = tape.value(masked_logits);
    std::vector<int32_t> golds;
    golds.reserve(static_cast<size_t>(n));
    for (int32_t b = 0; b < batch.rows(); ++b)
      for (int32_t t : batch.mask_positions[static_cast<size_t>(b)]) golds.push_back(batch.labels.at(b, t));
    const int64_t vsz = L.cols();
    for (int64_t r = 0; r < n; ++r) {
      out.preds.push_back(predict_at(L, r));
      const T* row = L.data.data() + r * vsz;
      T mx = row[0];
      for (int64_t c = 1; c < vsz; ++c) mx = std::max(mx, row[c]);
      double sum = 0;
      for (int64_t c = 0; c < vsz; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
      out.nll.push_back(static_cast<double>(mx) + std::log(sum) -
                        static_cast<double>(row[golds[static_cast<size_t>(r)]]));
    }
    return out;
  }
};

template <typename T>
std::shared_ptr<MaskFiller::Impl> make_filler(const std::vector<TensorBlob>& blobs, const TrainConfig& cfg) {
  auto impl = std::make_shared<FillerImpl<T>>();
  impl->cfg = cfg;
  impl->vocab = Vocabulary::deserialize(string_from_blob(find_blob(blobs, "__meta/vocab")));
  EncoderConfig ec;
  ec.layers = cfg.layers;
  ec.d_model = cfg.d_model;
  ec.heads = cfg.heads;
  ec.max_len = cfg.max_len;
  ec.vocab = impl->vocab.size();
  if (is_electra_mode(parse_mode(cfg.mode))) {
    impl->electra = std::make_unique<ElectraModel<T>>(ec, cfg.seed);
    ParamStore<T>& store = impl->electra->store();
    for (size_t i = 0; i < store.size(); ++i) load_tensor_checked(blobs, "model/" + store.names[i], store.values[i]);
  } else {
    impl->mlm = std::make_unique<MlmModel<T>>(ec, cfg.seed);
    ParamStore<T>& store = impl->mlm->store();
    for (size_t i = 0; i < store.size(); ++i) load_tensor_checked(blobs, "model/" + store.names[i], store.values[i]);
  }
  return impl;
}

}  // namespace

MaskFiller::MaskFiller(const std::string& checkpoint_path) {
  const std::vector<TensorBlob> blobs = read_container(checkpoint_path);
  const TrainConfig cfg = TrainConfig::from_json(nlohmann::json::parse(string_from_blob(find_blob(blobs, "__meta/config"))));
  if (cfg.precision == "f32")
    impl_ = make_filler<float>(blobs, cfg);
  else
    impl_ = make_filler<double>(blobs, cfg);
}

const Vocabulary& MaskFiller::vocab() const { return impl_->vocab; }
int MaskFiller::max_len() const { return impl_->cfg.max_len; }
MaskFiller::Out MaskFiller::fill(const MaskedBatch& batch) const { return impl_->do_fill(batch); }

// ---------------------------------------------------------------------------

std::vector<EvalBatch> deterministic_eval_batches(const std::vector<std::string>& lines, const Vocabulary& vocab,
                                                  int max_len, double mask_ratio, uint64_t seed, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("eval batches: batch_size must be >= 1");
  std::vector<EvalBatch> batches;
  const int64_t n = static_cast<int64_t>(lines.size());
  for (int64_t begin = 0; begin < n; begin += batch_size) {
    const int64_t end = std::min<int64_t>(begin + batch_size, n);
    const auto bsz = static_cast<int32_t>(end - begin);

    std::vector<std::vector<int32_t>> rows(static_cast<size_t>(bsz));
    std::vector<std::vector<int32_t>> row_labels(static_cast<size_t>(bsz));
    std::vector<std::vector<int32_t>> row_positions(static_cast<size_t>(bsz));
    std::vector<int32_t> attn(static_cast<size_t>(bsz));
    int32_t cols = 2;
    const CorruptionPolicy eval_policy{1.0, 0.0, 0.0};
    for (int32_t b = 0; b < bsz; ++b) {
      std::vector<int32_t> ids = encode(tokenize(lines[static_cast<size_t>(begin + b)]), vocab, max_len);
      int32_t alen = 0;
      while (alen < static_cast<int32_t>(ids.size()) && ids[static_cast<size_t>(alen)] != Vocabulary::kPad) ++alen;
      Rng rng = Rng::stream(seed, rng_purpose::kEvalMask, static_cast<uint64_t>(begin + b));
      apply_masking(ids, alen, mask_ratio, eval_policy, vocab, rng, row_labels[static_cast<size_t>(b)],
                    row_positions[static_cast<size_t>(b)]);
      rows[static_cast<size_t>(b)] = std::move(ids);
      attn[static_cast<size_t>(b)] = alen;
      cols = std::max(cols, alen);
    }

    EvalBatch eb;
    eb.batch.input_ids = IdMat(bsz, cols, Vocabulary::kPad);
    eb.batch.labels = IdMat(bsz, cols, -1);
    eb.batch.mask_positions.resize(static_cast<size_t>(bsz));
    eb.batch.attention_len = attn;
    for (int32_t b = 0; b < bsz; ++b) {
      for (int32_t t = 0; t < cols; ++t) {
        eb.batch.input_ids.at(b, t) = rows[static_cast<size_t>(b)][static_cast<size_t>(t)];
        eb.batch.labels.at(b, t) = row_labels[static_cast<size_t>(b)][static_cast<size_t>(t)];
      }
      eb.batch.mask_positions[static_cast<size_t>(b)] = std::move(row_positions[static_cast<size_t>(b)]);
      eb.lines.push_back(begin + b);
    }
    batches.push_back(std::move(eb));
  }
  return batches;
}

EvalMetrics metrics_from_records(const std::vector<MaskFillRecord>& records, int64_t sequences,
                                 const SynonymTable* table) {
  EvalMetrics m;
  m.sequences = sequences;
  m.masked = static_cast<int64_t>(records.size());
  if (records.empty()) return m;
  int64_t exact = 0, credit = 0;
  double loss = 0;
  for (const MaskFillRecord& r : records) {
    const bool hit = r.pred == r.gold;
    exact += hit ? 1 : 0;
    credit += (hit || (table && table->contains(r.gold, r.pred))) ? 1 : 0;
    loss += r.nll;
  }
  m.exact_match = static_cast<double>(exact) / static_cast<double>(m.masked);
  m.synonym_credit = static_cast<double>(credit) / static_cast<double>(m.masked);
  m.mean_loss = loss / static_cast<double>(m.masked);
  return m;
}

EvalMetrics evaluate_mask_fill(const std::string& checkpoint_path, const std::string& corpus_path,
                               const SynonymTable* table, double mask_ratio, uint64_t seed) {
  MaskFiller filler(checkpoint_path);
  if (table && table->vocab_size() != filler.vocab().size())
    throw std::invalid_argument("evaluate: synonym table vocab size (" + std::to_string(table->vocab_size()) +
                                ") does not match checkpoint vocab (" + std::to_string(filler.vocab().size()) + ")");
  const std::vector<std::string> lines = read_lines(corpus_path);
  std::vector<MaskFillRecord> records;
  for (const EvalBatch& eb : deterministic_eval_batches(lines, filler.vocab(), filler.max_len(), mask_ratio, seed)) {
    MaskFiller::Out out = filler.fill(eb.batch);
    size_t i = 0;
    for (int32_t b = 0; b < eb.batch.rows(); ++b) {
      for (int32_t t : eb.batch.mask_positions[static_cast<size_t>(b)]) {
        MaskFillRecord rec;
        rec.line = eb.lines[static_cast<size_t>(b)];
        rec.pos = t;
        rec.gold = eb.batch.labels.at(b, t);
        rec.pred = out.preds[i];
        rec.nll = out.nll[i];
        records.push_back(rec);
        ++i;
      }
    }
  }
  return metrics_from_records(records, static_cast<int64_t>(lines.size()), table);
}

}  // namespace truenet
