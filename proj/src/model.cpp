#include "truenet/model.hpp"

#include <cmath>
#include <stdexcept>

namespace truenet {

namespace {

template <typename T>
Tensor<T> normal_init(std::vector<int64_t> shape, double std, Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (T& v : t.data) v = static_cast<T>(rng.normal(0.0, std));
  return t;
}

// flattened position ids 0..T-1 repeated per batch row
std::vector<int32_t> position_index(int32_t batch, int32_t seq_len) {
  std::vector<int32_t> idx(static_cast<size_t>(batch) * seq_len);
  for (int32_t b = 0; b < batch; ++b)
    for (int32_t t = 0; t < seq_len; ++t) idx[static_cast<size_t>(b) * seq_len + t] = t;
  return idx;
}

std::vector<int32_t> flat_ids(const IdMat& ids, int32_t vocab) {
  std::vector<int32_t> out(ids.v.begin(), ids.v.end());
  for (int32_t id : out)
    if (id < 0 || id >= vocab)
      throw std::out_of_range("model: token id " + std::to_string(id) + " outside vocab of " + std::to_string(vocab));
  return out;
}

}  // namespace

void EncoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("encoder config: layers must be >= 1");
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("encoder config: d_model must be a positive multiple of heads");
  if (max_len < 2) throw std::invalid_argument("encoder config: max_len must be >= 2");
  if (vocab <= Vocabulary::kNumSpecial)
    throw std::invalid_argument("encoder config: vocab must exceed the special tokens");
  if (ffn_mult < 1) throw std::invalid_argument("encoder config: ffn_mult must be >= 1");
  if (ln_eps <= 0) throw std::invalid_argument("encoder config: ln_eps must be positive");
}

template <typename T>
EncoderIdx add_encoder_params(ParamStore<T>& store, const EncoderConfig& cfg, const std::string& prefix, Rng& rng) {
  const int64_t d = cfg.d_model;
  const int64_t f = cfg.ffn_dim();
  EncoderIdx idx;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + "layer" + std::to_string(l) + "/";
    EncoderIdx::Layer L;
    L.ln1_g = store.add(lp + "ln1_gain", Tensor<T>::full({d}, T(1)));
    L.ln1_b = store.add(lp + "ln1_bias", Tensor<T>::zeros({d}));
    L.wq = store.add(lp + "wq", normal_init<T>({d, d}, cfg.init_std, rng));
    L.bq = store.add(lp + "bq", Tensor<T>::zeros({d}));
    L.wk = store.add(lp + "wk", normal_init<T>({d, d}, cfg.init_std, rng));
    L.bk = store.add(lp + "bk", Tensor<T>::zeros({d}));
    L.wv = store.add(lp + "wv", normal_init<T>({d, d}, cfg.init_std, rng));
    L.bv = store.add(lp + "bv", Tensor<T>::zeros({d}));
    L.wo = store.add(lp + "wo", normal_init<T>({d, d}, cfg.init_std, rng));
    L.bo = store.add(lp + "bo", Tensor<T>::zeros({d}));
    L.ln2_g = store.add(lp + "ln2_gain", Tensor<T>::full({d}, T(1)));
    L.ln2_b = store.add(lp + "ln2_bias", Tensor<T>::zeros({d}));
    L.w1 = store.add(lp + "ffn_w1", normal_init<T>({d, f}, cfg.init_std, rng));
    L.b1 = store.add(lp + "ffn_b1", Tensor<T>::zeros({f}));
    L.w2 = store.add(lp + "ffn_w2", normal_init<T>({f, d}, cfg.init_std, rng));
    L.b2 = store.add(lp + "ffn_b2", Tensor<T>::zeros({d}));
    idx.layers.push_back(L);
  }
  idx.lnf_g = store.add(prefix + "lnf_gain", Tensor<T>::full({d}, T(1)));
  idx.lnf_b = store.add(prefix + "lnf_bias", Tensor<T>::zeros({d}));
  return idx;
}

template <typename T>
Var encoder_stack(Tape<T>& tape, std::span<const Var> p, const EncoderIdx& idx, const EncoderConfig& cfg, Var x,
                  int32_t batch, int32_t seq_len, const std::vector<int32_t>& attn_len, EncoderProbe* probe) {
  if (seq_len > cfg.max_len)
    throw std::invalid_argument("encoder: sequence length " + std::to_string(seq_len) + " exceeds max_len " +
                                std::to_string(cfg.max_len));
  if (static_cast<int32_t>(attn_len.size()) != batch)
    throw std::invalid_argument("encoder: attention_len size must equal batch");

  const int hd = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  // one additive key mask per batch row, shared by all layers
  std::vector<Var> masks(static_cast<size_t>(batch));
  for (int32_t b = 0; b < batch; ++b) {
    Tensor<T> m = Tensor<T>::zeros({seq_len, seq_len});
    const int32_t alen = std::max<int32_t>(1, std::min(attn_len[static_cast<size_t>(b)], seq_len));
    for (int64_t r = 0; r < seq_len; ++r)
      for (int64_t c = alen; c < seq_len; ++c) m.at(r, c) = static_cast<T>(kAttnMask);
    masks[static_cast<size_t>(b)] = tape.leaf(std::move(m), false);
  }

  for (const auto& L : idx.layers) {
    Var h = tape.layer_norm_rows(x, p[L.ln1_g], p[L.ln1_b], static_cast<T>(cfg.ln_eps));
    Var q = tape.add_row(tape.matmul(h, p[L.wq]), p[L.bq]);
    Var k = tape.add_row(tape.matmul(h, p[L.wk]), p[L.bk]);
    Var v = tape.add_row(tape.matmul(h, p[L.wv]), p[L.bv]);

    std::vector<Var> rows;
    rows.reserve(static_cast<size_t>(batch));
    for (int32_t b = 0; b < batch; ++b) {
      Var qb = tape.slice_rows(q, static_cast<int64_t>(b) * seq_len, seq_len);
      Var kb = tape.slice_rows(k, static_cast<int64_t>(b) * seq_len, seq_len);
      Var vb = tape.slice_rows(v, static_cast<int64_t>(b) * seq_len, seq_len);
      std::vector<Var> heads;
      heads.reserve(static_cast<size_t>(cfg.heads));
      for (int hh = 0; hh < cfg.heads; ++hh) {
        Var qh = tape.slice_cols(qb, static_cast<int64_t>(hh) * hd, hd);
        Var kh = tape.slice_cols(kb, static_cast<int64_t>(hh) * hd, hd);
        Var vh = tape.slice_cols(vb, static_cast<int64_t>(hh) * hd, hd);
        Var scores = tape.affine(tape.matmul_nt(qh, kh), scale, T(0));
        scores = tape.add(scores, masks[static_cast<size_t>(b)]);
        Var attn = tape.softmax_rows(scores);
        if (probe) probe->attention.push_back(attn);
        heads.push_back(tape.matmul(attn, vh));
      }
      rows.push_back(cfg.heads == 1 ? heads[0] : tape.concat_cols(heads));
    }
    Var ctx = batch == 1 ? rows[0] : tape.concat_rows(rows);
    Var attn_out = tape.add_row(tape.matmul(ctx, p[L.wo]), p[L.bo]);
    x = tape.add(x, attn_out);

    Var h2 = tape.layer_norm_rows(x, p[L.ln2_g], p[L.ln2_b], static_cast<T>(cfg.ln_eps));
    Var f = tape.add_row(tape.matmul(h2, p[L.w1]), p[L.b1]);
    f = tape.gelu(f);
    f = tape.add_row(tape.matmul(f, p[L.w2]), p[L.b2]);
    x = tape.add(x, f);
  }
  return tape.layer_norm_rows(x, p[idx.lnf_g], p[idx.lnf_b], static_cast<T>(cfg.ln_eps));
}

template <typename T>
int32_t predict_at(const Tensor<T>& logits, int64_t row) {
  const int64_t vsz = logits.cols();
  if (row < 0 || row >= logits.rows()) throw std::out_of_range("predict: row out of range");
  if (vsz <= Vocabulary::kNumSpecial) throw std::invalid_argument("predict: no non-special ids");
  const T* r = logits.data.data() + row * vsz;
  int32_t best = Vocabulary::kNumSpecial;
  for (int64_t c = Vocabulary::kNumSpecial + 1; c < vsz; ++c)
    if (r[c] > r[best]) best = static_cast<int32_t>(c);
  return best;
}

template <typename T>
int32_t sample_at(const Tensor<T>& logits, int64_t row, Rng& rng) {
  const int64_t vsz = logits.cols();
  if (row < 0 || row >= logits.rows()) throw std::out_of_range("sample: row out of range");
  if (vsz <= Vocabulary::kNumSpecial) throw std::invalid_argument("sample: no non-special ids");
  const T* r = logits.data.data() + row * vsz;
  T mx = r[Vocabulary::kNumSpecial];
  for (int64_t c = Vocabulary::kNumSpecial + 1; c < vsz; ++c) mx = std::max(mx, r[c]);
  double total = 0.0;
  for (int64_t c = Vocabulary::kNumSpecial; c < vsz; ++c) total += std::exp(static_cast<double>(r[c] - mx));
  const double u = rng.uniform() * total;
  double cum = 0.0;
  for (int64_t c = Vocabulary::kNumSpecial; c < vsz; ++c) {
    cum += std::exp(static_cast<double>(r[c] - mx));
    if (u < cum) return static_cast<int32_t>(c);
  }
  return static_cast<int32_t>(vsz - 1);
}

// ---------------------------------------------------------------------------

template <typename T>
MlmModel<T>::MlmModel(EncoderConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::stream(seed, rng_purpose::kInit, 0);
  emb_ = store_.add("emb", normal_init<T>({cfg_.vocab, cfg_.d_model}, cfg_.init_std, rng));
  pos_ = store_.add("pos", normal_init<T>({cfg_.max_len, cfg_.d_model}, cfg_.init_std, rng));
  enc_ = add_encoder_params(store_, cfg_, "enc/", rng);
  mlm_bias_ = store_.add("mlm_bias", Tensor<T>::zeros({cfg_.vocab}));
}

template <typename T>
Var MlmModel<T>::forward(Tape<T>& tape, std::span<const Var> p, const IdMat& ids,
                         const std::vector<int32_t>& attn_len, EncoderProbe* probe) const {
  if (ids.cols > cfg_.max_len)
    throw std::invalid_argument("encoder: sequence length " + std::to_string(ids.cols) + " exceeds max_len " +
                                std::to_string(cfg_.max_len));
  Var tok = tape.gather_rows(p[emb_], flat_ids(ids, cfg_.vocab));
  Var pos = tape.gather_rows(p[pos_], position_index(ids.rows, ids.cols));
  Var x = tape.add(tok, pos);
  return encoder_stack(tape, p, enc_, cfg_, x, ids.rows, ids.cols, attn_len, probe);
}

template <typename T>
Var MlmModel<T>::logits(Tape<T>& tape, std::span<const Var> p, Var hidden) const {
  return tape.add_row(tape.matmul_nt(hidden, p[emb_]), p[mlm_bias_]);
}

template <typename T>
Var MlmModel<T>::logits_at(Tape<T>& tape, std::span<const Var> p, Var hidden, std::vector<int32_t> rows) const {
  Var sel = tape.gather_rows(hidden, std::move(rows));
  return tape.add_row(tape.matmul_nt(sel, p[emb_]), p[mlm_bias_]);
}

template <typename T>
int64_t MlmModel<T>::expected_param_count(const EncoderConfig& cfg) {
  const int64_t d = cfg.d_model;
  const int64_t f = cfg.ffn_dim();
  const int64_t per_layer = 4 * d * d + 4 * d /*qkvo*/ + 4 * d /*ln1,ln2*/ + d * f + f + f * d + d;
  return static_cast<int64_t>(cfg.vocab) * d /*emb*/ + static_cast<int64_t>(cfg.max_len) * d /*pos*/ +
         cfg.layers * per_layer + 2 * d /*final ln*/ + cfg.vocab /*mlm bias*/;
}

// ---------------------------------------------------------------------------

EncoderConfig generator_config_impl(const EncoderConfig& disc_cfg) {
  if (disc_cfg.d_model % 4 != 0)
    throw std::invalid_argument("electra: discriminator d_model must be divisible by 4");
  EncoderConfig g = disc_cfg;
  g.d_model = disc_cfg.d_model / 4;
  g.heads = std::max(1, disc_cfg.heads / 4);
  while (g.d_model % g.heads != 0) --g.heads;
  g.validate();
  return g;
}

template <typename T>
EncoderConfig ElectraModel<T>::generator_config_for(const EncoderConfig& disc_cfg) {
  return generator_config_impl(disc_cfg);
}

template <typename T>
ElectraModel<T>::ElectraModel(EncoderConfig disc_cfg, uint64_t seed) : cfg_(disc_cfg) {
  cfg_.validate();
  gen_cfg_ = generator_config_impl(cfg_);
  Rng rng = Rng::stream(seed, rng_purpose::kInit, 0);
  const int64_t d = cfg_.d_model;
  const int64_t dg = gen_cfg_.d_model;
  emb_ = store_.add("emb", normal_init<T>({cfg_.vocab, d}, cfg_.init_std, rng));
  pos_ = store_.add("pos", normal_init<T>({cfg_.max_len, d}, cfg_.init_std, rng));
  gen_in_ = store_.add("gen/proj_in", normal_init<T>({d, dg}, cfg_.init_std, rng));
  gen_enc_ = add_encoder_params(store_, gen_cfg_, "gen/", rng);
  gen_out_ = store_.add("gen/proj_out", normal_init<T>({dg, d}, cfg_.init_std, rng));
  gen_bias_ = store_.add("gen/mlm_bias", Tensor<T>::zeros({cfg_.vocab}));
  disc_enc_ = add_encoder_params(store_, cfg_, "disc/", rng);
  disc_w_ = store_.add("disc/head_w", normal_init<T>({d, 1}, cfg_.init_std, rng));
  disc_b_ = store_.add("disc/head_b", Tensor<T>::zeros({1}));
}

template <typename T>
Var ElectraModel<T>::embed(Tape<T>& tape, std::span<const Var> p, const IdMat& ids) const {
  if (ids.cols > cfg_.max_len)
    throw std::invalid_argument("encoder: sequence length " + std::to_string(ids.cols) + " exceeds max_len " +
                                std::to_string(cfg_.max_len));
  Var tok = tape.gather_rows(p[emb_], flat_ids(ids, cfg_.vocab));
  Var pos = tape.gather_rows(p[pos_], position_index(ids.rows, ids.cols));
  return tape.add(tok, pos);
}

template <typename T>
Var ElectraModel<T>::gen_logits(Tape<T>& tape, std::span<const Var> p, const IdMat& ids,
                                const std::vector<int32_t>& attn_len) const {
  Var x = tape.matmul(embed(tape, p, ids), p[gen_in_]);
  Var hidden = encoder_stack(tape, p, gen_enc_, gen_cfg_, x, ids.rows, ids.cols, attn_len);
  Var up = tape.matmul(hidden, p[gen_out_]);
  return tape.add_row(tape.matmul_nt(up, p[emb_]), p[gen_bias_]);
}

template <typename T>
Var ElectraModel<T>::disc_logits(Tape<T>& tape, std::span<const Var> p, const IdMat& ids,
                                 const std::vector<int32_t>& attn_len) const {
  Var hidden = encoder_stack(tape, p, disc_enc_, cfg_, embed(tape, p, ids), ids.rows, ids.cols, attn_len);
  return tape.add_row(tape.matmul(hidden, p[disc_w_]), p[disc_b_]);
}

template <typename T>
int64_t ElectraModel<T>::expected_param_count(const EncoderConfig& disc_cfg) {
  const EncoderConfig gen_cfg = generator_config_impl(disc_cfg);
  const int64_t d = disc_cfg.d_model;
  const int64_t dg = gen_cfg.d_model;
  auto stack_params = [](const EncoderConfig& c) {
    const int64_t dd = c.d_model;
    const int64_t f = c.ffn_dim();
    return c.layers * (4 * dd * dd + 8 * dd + dd * f + f + f * dd + dd) + 2 * dd;
  };
  return static_cast<int64_t>(disc_cfg.vocab) * d + static_cast<int64_t>(disc_cfg.max_len) * d /*emb,pos*/ +
         d * dg + stack_params(gen_cfg) + dg * d + disc_cfg.vocab /*generator*/ +
         stack_params(disc_cfg) + d + 1 /*discriminator*/;
}

template EncoderIdx add_encoder_params<float>(ParamStore<float>&, const EncoderConfig&, const std::string&, Rng&);
template EncoderIdx add_encoder_params<double>(ParamStore<double>&, const EncoderConfig&, const std::string&, Rng&);
template Var encoder_stack<float>(Tape<float>&, std::span<const Var>, const EncoderIdx&, const EncoderConfig&, Var,
                                  int32_t, int32_t, const std::vector<int32_t>&, EncoderProbe*);
template Var encoder_stack<double>(Tape<double>&, std::span<const Var>, const EncoderIdx&, const EncoderConfig&, Var,
                                   int32_t, int32_t, const std::vector<int32_t>&, EncoderProbe*);
template int32_t predict_at<float>(const Tensor<float>&, int64_t);
template int32_t predict_at<double>(const Tensor<double>&, int64_t);
template int32_t sample_at<float>(const Tensor<float>&, int64_t, Rng&);
template int32_t sample_at<double>(const Tensor<double>&, int64_t, Rng&);
template class MlmModel<float>;
template class MlmModel<double>;
template class ElectraModel<float>;
template class ElectraModel<double>;

}  // namespace truenet
