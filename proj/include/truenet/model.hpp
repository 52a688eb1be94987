#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "truenet/params.hpp"
#include "truenet/rng.hpp"
#include "truenet/tape.hpp"
#include "truenet/text.hpp"

namespace truenet {

struct EncoderConfig {
  int layers = 2;
  int d_model = 16;
  int heads = 2;
  int max_len = 32;
  int vocab = 0;
  int ffn_mult = 4;
  double ln_eps = 1e-5;
  double init_std = 0.02;

  int head_dim() const { return d_model / heads; }
  int ffn_dim() const { return ffn_mult * d_model; }
  void validate() const;
};

// Constant added to attention scores at padded key positions. Large enough
// that exp underflows to exactly zero after max subtraction.
constexpr double kAttnMask = -1e30;

// Per-layer weight indices into a ParamStore; filled by add_encoder_params.
struct EncoderIdx {
  struct Layer {
    int wq, bq, wk, bk, wv, bv, wo, bo;
    int ln1_g, ln1_b;
    int w1, b1, w2, b2;
    int ln2_g, ln2_b;
  };
  std::vector<Layer> layers;
  int lnf_g = -1, lnf_b = -1;
};

// Optional hook collecting the attention-probability nodes of a forward pass
// (one [T×T] Var per batch row, head and layer).
struct EncoderProbe {
  std::vector<Var> attention;
};

template <typename T>
EncoderIdx add_encoder_params(ParamStore<T>& store, const EncoderConfig& cfg, const std::string& prefix, Rng& rng);

// Pre-norm transformer stack over already-embedded input rows [B*T×d].
// Padded key positions are masked out of every attention row.
template <typename T>
Var encoder_stack(Tape<T>& tape, std::span<const Var> params, const EncoderIdx& idx, const EncoderConfig& cfg,
                  Var x, int32_t batch, int32_t seq_len, const std::vector<int32_t>& attn_len,
                  EncoderProbe* probe = nullptr);

// argmax over non-special vocab ids at the given row; ties -> lowest id.
template <typename T>
int32_t predict_at(const Tensor<T>& logits, int64_t row);

// One categorical draw from softmax over non-special ids at the given row.
template <typename T>
int32_t sample_at(const Tensor<T>& logits, int64_t row, Rng& rng);

// Transformer encoder with a tied-embedding MLM head: the embedding matrix
// serves both the input lookup and the output projection.
template <typename T>
class MlmModel {
 public:
  MlmModel(EncoderConfig cfg, uint64_t seed);

  std::vector<Var> push_params(Tape<T>& tape, bool requires_grad = true) const {
    return store_.push_all(tape, requires_grad);
  }
  // hidden [B*T×d]
  Var forward(Tape<T>& tape, std::span<const Var> p, const IdMat& ids, const std::vector<int32_t>& attn_len,
              EncoderProbe* probe = nullptr) const;
  // logits over the full sequence [B*T×|V|]
  Var logits(Tape<T>& tape, std::span<const Var> p, Var hidden) const;
  // logits restricted to the given flattened rows [n×|V|]
  Var logits_at(Tape<T>& tape, std::span<const Var> p, Var hidden, std::vector<int32_t> rows) const;

  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const EncoderConfig& config() const { return cfg_; }
  int embedding_index() const { return emb_; }
  static int64_t expected_param_count(const EncoderConfig& cfg);

 private:
  EncoderConfig cfg_;
  ParamStore<T> store_;
  int emb_ = -1, pos_ = -1, mlm_bias_ = -1;
  EncoderIdx enc_;
};

// Generator/discriminator pair with one shared embedding storage. The
// generator runs at a quarter of the discriminator width behind input/output
// projections, so both sides accumulate gradient into the same matrix.
template <typename T>
class ElectraModel {
 public:
  ElectraModel(EncoderConfig disc_cfg, uint64_t seed);

  std::vector<Var> push_params(Tape<T>& tape, bool requires_grad = true) const {
    return store_.push_all(tape, requires_grad);
  }
  // generator MLM logits [B*T×|V|]
  Var gen_logits(Tape<T>& tape, std::span<const Var> p, const IdMat& ids, const std::vector<int32_t>& attn_len) const;
  // per-position replaced-vs-original logit [B*T×1]
  Var disc_logits(Tape<T>& tape, std::span<const Var> p, const IdMat& ids, const std::vector<int32_t>& attn_len) const;

  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  const EncoderConfig& config() const { return cfg_; }
  const EncoderConfig& generator_config() const { return gen_cfg_; }
  int embedding_index() const { return emb_; }
  static EncoderConfig generator_config_for(const EncoderConfig& disc_cfg);
  static int64_t expected_param_count(const EncoderConfig& disc_cfg);

 private:
  Var embed(Tape<T>& tape, std::span<const Var> p, const IdMat& ids) const;

  EncoderConfig cfg_;      // discriminator dims
  EncoderConfig gen_cfg_;  // generator dims (d/4)
  ParamStore<T> store_;
  int emb_ = -1, pos_ = -1;
  int gen_in_ = -1, gen_out_ = -1, gen_bias_ = -1;
  int disc_w_ = -1, disc_b_ = -1;
  EncoderIdx gen_enc_, disc_enc_;
};

extern template EncoderIdx add_encoder_params<float>(ParamStore<float>&, const EncoderConfig&, const std::string&, Rng&);
extern template EncoderIdx add_encoder_params<double>(ParamStore<double>&, const EncoderConfig&, const std::string&, Rng&);
extern template Var encoder_stack<float>(Tape<float>&, std::span<const Var>, const EncoderIdx&, const EncoderConfig&,
                                         Var, int32_t, int32_t, const std::vector<int32_t>&, EncoderProbe*);
extern template Var encoder_stack<double>(Tape<double>&, std::span<const Var>, const EncoderIdx&, const EncoderConfig&,
                                          Var, int32_t, int32_t, const std::vector<int32_t>&, EncoderProbe*);
extern template int32_t predict_at<float>(const Tensor<float>&, int64_t);
extern template int32_t predict_at<double>(const Tensor<double>&, int64_t);
extern template int32_t sample_at<float>(const Tensor<float>&, int64_t, Rng&);
extern template int32_t sample_at<double>(const Tensor<double>&, int64_t, Rng&);
extern template class MlmModel<float>;
extern template class MlmModel<double>;
extern template class ElectraModel<float>;
extern template class ElectraModel<double>;

}  // namespace truenet
