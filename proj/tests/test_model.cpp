#include <doctest.h>

#include <cmath>
#include <vector>

#include "truenet/model.hpp"

using namespace truenet;

namespace {

EncoderConfig small_config(int layers = 2, int d = 8, int heads = 2, int max_len = 8, int vocab = 20) {
  EncoderConfig cfg;
  cfg.layers = layers;
  cfg.d_model = d;
  cfg.heads = heads;
  cfg.max_len = max_len;
  cfg.vocab = vocab;
  return cfg;
}

using Mat = std::vector<std::vector<double>>;

Mat from_tensor(const Tensor<double>& t) {
  Mat m(static_cast<size_t>(t.rows()), std::vector<double>(static_cast<size_t>(t.cols())));
  for (int64_t r = 0; r < t.rows(); ++r)
    for (int64_t c = 0; c < t.cols(); ++c) m[static_cast<size_t>(r)][static_cast<size_t>(c)] = t.at(r, c);
  return m;
}

Mat mat_mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < b.size(); ++k)
      for (size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

std::vector<double> row_softmax(std::vector<double> x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0;
  for (double& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : x) v /= sum;
  return x;
}

Mat layer_norm_oracle(const Mat& x, const std::vector<double>& g, const std::vector<double>& b, double eps) {
  Mat y = x;
  for (size_t r = 0; r < x.size(); ++r) {
    double mean = 0;
    for (double v : x[r]) mean += v;
    mean /= static_cast<double>(x[r].size());
    double var = 0;
    for (double v : x[r]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[r].size());
    for (size_t c = 0; c < x[r].size(); ++c) y[r][c] = (x[r][c] - mean) / std::sqrt(var + eps) * g[c] + b[c];
  }
  return y;
}

double gelu_oracle(double v) {
  const double u = std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v);
  return 0.5 * v * (1.0 + std::tanh(u));
}

}  // namespace

TEST_CASE("encoder forward: output shape and length guard") {
  MlmModel<double> model(small_config(), 1);
  IdMat ids(2, 5, Vocabulary::kCls);
  for (int32_t b = 0; b < 2; ++b)
    for (int32_t t = 1; t < 5; ++t) ids.at(b, t) = Vocabulary::kNumSpecial + t;
  Tape<double> tape;
  std::vector<Var> p = model.push_params(tape, false);
  Var hidden = model.forward(tape, p, ids, {5, 5});
  CHECK(tape.value(hidden).shape == std::vector<int64_t>{10, 8});

  IdMat too_long(1, 12, Vocabulary::kCls);
  CHECK_THROWS_AS(model.forward(tape, p, too_long, {12}), std::invalid_argument);

  IdMat bad_id(1, 3, Vocabulary::kCls);
  bad_id.at(0, 1) = 999;
  CHECK_THROWS_AS(model.forward(tape, p, bad_id, {3}), std::out_of_range);
}

TEST_CASE("pad content never leaks into non-pad outputs") {
  MlmModel<double> model(small_config(), 3);
  IdMat a(1, 6, Vocabulary::kPad);
  a.at(0, 0) = Vocabulary::kCls;
  a.at(0, 1) = 5;
  a.at(0, 2) = 6;
  IdMat b = a;
  b.at(0, 3) = 9;  // arbitrary junk in the pad-only suffix
  b.at(0, 4) = 11;
  b.at(0, 5) = 7;

  Tape<double> ta, tb;
  std::vector<Var> pa = model.push_params(ta, false);
  std::vector<Var> pb = model.push_params(tb, false);
  const Tensor<double>& ha = ta.value(model.forward(ta, pa, a, {3}));
  const Tensor<double>& hb = tb.value(model.forward(tb, pb, b, {3}));
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 8; ++c) CHECK(ha.at(r, c) == hb.at(r, c));
}

TEST_CASE("attention rows over non-pad keys sum to 1") {
  MlmModel<double> model(small_config(), 5);
  IdMat ids(2, 6, Vocabulary::kPad);
  for (int32_t b = 0; b < 2; ++b) {
    ids.at(b, 0) = Vocabulary::kCls;
    for (int32_t t = 1; t < 4; ++t) ids.at(b, t) = Vocabulary::kNumSpecial + t + b;
  }
  Tape<double> tape;
  std::vector<Var> p = model.push_params(tape, false);
  EncoderProbe probe;
  model.forward(tape, p, ids, {4, 4}, &probe);
  REQUIRE(!probe.attention.empty());
  for (Var attn : probe.attention) {
    const Tensor<double>& A = tape.value(attn);
    for (int64_t r = 0; r < A.rows(); ++r) {
      double total = 0, over_real = 0;
      for (int64_t c = 0; c < A.cols(); ++c) {
        total += A.at(r, c);
        if (c < 4) over_real += A.at(r, c);
      }
      CHECK(std::fabs(total - 1.0) < 1e-12);
      CHECK(std::fabs(over_real - 1.0) < 1e-12);  // pad keys carry zero mass
    }
  }
}

TEST_CASE("single-layer forward matches a step-by-step oracle") {
  EncoderConfig cfg = small_config(1, 4, 2, 6, 12);
  MlmModel<double> model(cfg, 17);
  const ParamStore<double>& store = model.store();
  auto tensor = [&](const std::string& name) -> const Tensor<double>& {
    const int i = store.find(name);
    REQUIRE(i >= 0);
    return store.values[static_cast<size_t>(i)];
  };

  IdMat ids(1, 3, Vocabulary::kCls);
  ids.at(0, 1) = 7;
  ids.at(0, 2) = 9;

  // oracle: explicit pre-norm layer in plain loops
  const Mat E = from_tensor(tensor("emb"));
  const Mat P = from_tensor(tensor("pos"));
  Mat x(3, std::vector<double>(4));
  for (int t = 0; t < 3; ++t)
    for (int c = 0; c < 4; ++c)
      x[static_cast<size_t>(t)][static_cast<size_t>(c)] =
          E[static_cast<size_t>(ids.at(0, t))][static_cast<size_t>(c)] + P[static_cast<size_t>(t)][static_cast<size_t>(c)];

  const double eps = cfg.ln_eps;
  Mat h = layer_norm_oracle(x, tensor("enc/layer0/ln1_gain").data, tensor("enc/layer0/ln1_bias").data, eps);
  auto linear = [&](const Mat& in, const std::string& w, const std::string& b) {
    Mat out = mat_mul(in, from_tensor(tensor(w)));
    for (auto& row : out)
      for (size_t c = 0; c < row.size(); ++c) row[c] += tensor(b).data[c];
    return out;
  };
  Mat q = linear(h, "enc/layer0/wq", "enc/layer0/bq");
  Mat k = linear(h, "enc/layer0/wk", "enc/layer0/bk");
  Mat v = linear(h, "enc/layer0/wv", "enc/layer0/bv");

  Mat ctx(3, std::vector<double>(4, 0.0));
  const int hd = 2;
  for (int head = 0; head < 2; ++head) {
    for (int r = 0; r < 3; ++r) {
      std::vector<double> scores(3);
      for (int c = 0; c < 3; ++c) {
        double dot = 0;
        for (int e = 0; e < hd; ++e)
          dot += q[static_cast<size_t>(r)][static_cast<size_t>(head * hd + e)] *
                 k[static_cast<size_t>(c)][static_cast<size_t>(head * hd + e)];
        scores[static_cast<size_t>(c)] = dot / std::sqrt(static_cast<double>(hd));
      }
      const std::vector<double> attn = row_softmax(scores);
      for (int c = 0; c < 3; ++c)
        for (int e = 0; e < hd; ++e)
          ctx[static_cast<size_t>(r)][static_cast<size_t>(head * hd + e)] +=
              attn[static_cast<size_t>(c)] * v[static_cast<size_t>(c)][static_cast<size_t>(head * hd + e)];
    }
  }
  Mat attn_out = mat_mul(ctx, from_tensor(tensor("enc/layer0/wo")));
  for (auto& row : attn_out)
    for (size_t c = 0; c < row.size(); ++c) row[c] += tensor("enc/layer0/bo").data[c];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) x[static_cast<size_t>(r)][static_cast<size_t>(c)] += attn_out[static_cast<size_t>(r)][static_cast<size_t>(c)];

  Mat h2 = layer_norm_oracle(x, tensor("enc/layer0/ln2_gain").data, tensor("enc/layer0/ln2_bias").data, eps);
  Mat f1 = linear(h2, "enc/layer0/ffn_w1", "enc/layer0/ffn_b1");
  for (auto& row : f1)
    for (double& val : row) val = gelu_oracle(val);
  Mat f2 = linear(f1, "enc/layer0/ffn_w2", "enc/layer0/ffn_b2");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) x[static_cast<size_t>(r)][static_cast<size_t>(c)] += f2[static_cast<size_t>(r)][static_cast<size_t>(c)];
  Mat want = layer_norm_oracle(x, tensor("enc/lnf_gain").data, tensor("enc/lnf_bias").data, eps);

  Tape<double> tape;
  std::vector<Var> p = model.push_params(tape, false);
  const Tensor<double>& got = tape.value(model.forward(tape, p, ids, {3}));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(std::fabs(got.at(r, c) - want[static_cast<size_t>(r)][static_cast<size_t>(c)]) < 1e-10);
}

TEST_CASE("mlm logits: shape, tied-embedding identity, matmul oracle") {
  EncoderConfig cfg = small_config(1, 4, 1, 6, 8);
  MlmModel<double> model(cfg, 23);
  // overwrite the embedding with orthonormal rows (identity-padded)
  ParamStore<double>& store = model.store();
  Tensor<double>& E = store.values[static_cast<size_t>(store.find("emb"))];
  for (int64_t r = 0; r < E.rows(); ++r)
    for (int64_t c = 0; c < E.cols(); ++c) E.at(r, c) = (r % 4 == c) ? 1.0 : 0.0;

  Tape<double> tape;
  std::vector<Var> p = model.push_params(tape, false);
  Var hidden = tape.leaf(Tensor<double>::matrix(2, 4, {0, 1, 0, 0,   // e_5 direction (5 % 4 == 1)
                                                       0, 0, 1, 0}));  // e_6 direction
  Var logits = model.logits(tape, p, hidden);
  CHECK(tape.value(logits).shape == std::vector<int64_t>{2, 8});
  // rows 1 and 5 tie at logit 1; predict() prefers the lowest non-special id
  CHECK(predict_at(tape.value(logits), 0) == 5);

  // random case: logits equal hidden · Eᵀ + bias by the naive oracle
  Rng rng(4);
  Tensor<double> H = Tensor<double>::zeros({3, 4});
  for (double& v : H.data) v = rng.normal(0, 1);
  Var logits2 = model.logits(tape, p, tape.leaf(H));
  const Tensor<double>& L = tape.value(logits2);
  const Tensor<double>& bias = store.values[static_cast<size_t>(store.find("mlm_bias"))];
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 8; ++c) {
      double want = bias.data[c];
      for (int64_t e = 0; e < 4; ++e) want += H.at(r, e) * E.at(c, e);
      CHECK(L.at(r, c) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("predict: one-hot, tie rule, special exclusion") {
  Tensor<double> logits = Tensor<double>::zeros({3, 10});
  logits.at(0, 7) = 5.0;
  CHECK(predict_at(logits, 0) == 7);

  logits.at(1, 7) = 2.0;
  logits.at(1, 9) = 2.0;
  CHECK(predict_at(logits, 1) == 7);  // exact tie -> lowest id

  logits.at(2, Vocabulary::kMask) = 100.0;  // special id carries the max logit
  logits.at(2, 6) = 1.0;
  CHECK(predict_at(logits, 2) == 6);
}

TEST_CASE("generator_sample: near-one-hot, uniform frequencies, reproducibility") {
  Tensor<double> hot = Tensor<double>::zeros({1, 8});
  hot.at(0, 5) = 50.0;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) CHECK(sample_at(hot, 0, rng) == 5);

  Tensor<double> uniform = Tensor<double>::zeros({1, 8});  // 4 non-special ids
  Rng r1(7);
  std::vector<int64_t> counts(8, 0);
  const int64_t n = 100000;
  for (int64_t i = 0; i < n; ++i) ++counts[static_cast<size_t>(sample_at(uniform, 0, r1))];
  const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
  for (int id = Vocabulary::kNumSpecial; id < 8; ++id)
    CHECK(std::fabs(static_cast<double>(counts[static_cast<size_t>(id)]) / n - 0.25) <= 3 * sigma);
  for (int id = 0; id < Vocabulary::kNumSpecial; ++id) CHECK(counts[static_cast<size_t>(id)] == 0);

  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) CHECK(sample_at(uniform, 0, a) == sample_at(uniform, 0, b));
}

TEST_CASE("parameter count is a deterministic function of the config") {
  EncoderConfig cfg = small_config(3, 16, 4, 24, 50);
  MlmModel<double> model(cfg, 9);
  CHECK(model.store().total_params() == MlmModel<double>::expected_param_count(cfg));

  ElectraModel<double> electra(cfg, 9);
  CHECK(electra.store().total_params() == ElectraModel<double>::expected_param_count(cfg));
  CHECK(ElectraModel<double>::generator_config_for(cfg).d_model == 4);
}

TEST_CASE("electra: discriminator head shape and zero-weight behaviour") {
  EncoderConfig cfg = small_config(1, 8, 2, 8, 16);
  ElectraModel<double> model(cfg, 31);
  ParamStore<double>& store = model.store();
  Tensor<double>& wd = store.values[static_cast<size_t>(store.find("disc/head_w"))];
  Tensor<double>& bd = store.values[static_cast<size_t>(store.find("disc/head_b"))];
  std::fill(wd.data.begin(), wd.data.end(), 0.0);
  bd.data[0] = 0.625;

  IdMat ids(2, 4, Vocabulary::kCls);
  for (int32_t b = 0; b < 2; ++b)
    for (int32_t t = 1; t < 4; ++t) ids.at(b, t) = Vocabulary::kNumSpecial + t;
  Tape<double> tape;
  std::vector<Var> p = model.push_params(tape, false);
  const Tensor<double>& logits = tape.value(model.disc_logits(tape, p, ids, {4, 4}));
  CHECK(logits.shape == std::vector<int64_t>{8, 1});
  for (double v : logits.data) CHECK(v == doctest::Approx(0.625));
}

TEST_CASE("electra: generator and discriminator losses both reach the shared embedding") {
  EncoderConfig cfg = small_config(1, 8, 2, 8, 16);
  ElectraModel<double> model(cfg, 33);
  IdMat ids(1, 4, Vocabulary::kCls);
  for (int32_t t = 1; t < 4; ++t) ids.at(0, t) = Vocabulary::kNumSpecial + t;

  const int emb = model.embedding_index();
  {
    Tape<double> tape;
    std::vector<Var> p = model.push_params(tape);
    Var gen = model.gen_logits(tape, p, ids, {4});
    Var loss = tape.cross_entropy_masked(gen, std::vector<int32_t>(4, 5), std::vector<uint8_t>(4, 1));
    tape.backward(loss);
    double sum = 0;
    for (double g : tape.grad(p[emb]).data) sum += std::fabs(g);
    CHECK(sum > 0);
  }
  {
    Tape<double> tape;
    std::vector<Var> p = model.push_params(tape);
    Var disc = model.disc_logits(tape, p, ids, {4});
    Var loss = tape.binary_ce_logits(disc, {0, 1, 0, 1}, {1, 1, 1, 1});
    tape.backward(loss);
    double sum = 0;
    for (double g : tape.grad(p[emb]).data) sum += std::fabs(g);
    CHECK(sum > 0);
  }
}

TEST_CASE("discriminator matches the encoder-plus-linear-head composition") {
  EncoderConfig cfg = small_config(2, 8, 2, 8, 16);
  ElectraModel<double> model(cfg, 41);
  IdMat ids(2, 5, Vocabulary::kCls);
  for (int32_t b = 0; b < 2; ++b)
    for (int32_t t = 1; t < 5; ++t) ids.at(b, t) = Vocabulary::kNumSpecial + 2 * t + b;

  Tape<double> tape;
  std::vector<Var> p = model.push_params(tape, false);
  const Tensor<double>& got = tape.value(model.disc_logits(tape, p, ids, {5, 5}));

  // an MlmModel with identical disc-side weights produces the same hidden
  MlmModel<double> twin(cfg, 0);
  ParamStore<double>& ts = twin.store();
  const ParamStore<double>& ms = model.store();
  for (size_t i = 0; i < ts.size(); ++i) {
    std::string name = ts.names[i];
    std::string source = name;
    if (name.rfind("enc/", 0) == 0) source = "disc/" + name.substr(4);
    const int j = ms.find(source);
    if (j < 0) continue;  // mlm_bias has no disc counterpart
    ts.values[i] = ms.values[static_cast<size_t>(j)];
  }
  Tape<double> tape2;
  std::vector<Var> tp = twin.push_params(tape2, false);
  Var hidden = twin.forward(tape2, tp, ids, {5, 5});
  Var head = tape2.add_row(
      tape2.matmul(hidden, tape2.leaf(ms.values[static_cast<size_t>(ms.find("disc/head_w"))])),
      tape2.leaf(ms.values[static_cast<size_t>(ms.find("disc/head_b"))]));
  const Tensor<double>& want = tape2.value(head);
  for (int64_t i = 0; i < got.numel(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
}
