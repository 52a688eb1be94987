#include <doctest.h>

#include <cmath>

#include "truenet/gradcheck.hpp"
#include "truenet/rng.hpp"

using namespace truenet;

namespace {

ParamStore<double> random_store(std::vector<std::pair<std::string, std::vector<int64_t>>> shapes, uint64_t seed,
                                double scale = 0.5) {
  Rng rng(seed);
  ParamStore<double> store;
  for (auto& [name, shape] : shapes) {
    Tensor<double> t = Tensor<double>::zeros(shape);
    for (double& v : t.data) v = rng.normal(0.0, scale);
    store.add(name, std::move(t));
  }
  return store;
}

constexpr double kH = 1e-5;

}  // namespace

TEST_CASE("quadratic loss gradient is exact") {
  // ||p||^2: central differences carry no truncation term for quadratics
  ParamStore<double> store = random_store({{"p", {1, 7}}}, 1, 1.5);
  auto loss = [](Tape<double>& tape, std::span<const Var> p) {
    return tape.mean_all(tape.matmul_nt(p[0], p[0]));
  };
  GradCheckResult res = check_gradients(store, loss, kH);
  CHECK(res.max_rel_err < 1e-8);
}

TEST_CASE("softmax + cross entropy composition passes the finite-difference check") {
  ParamStore<double> store = random_store({{"w", {6, 5}}, {"b", {5}}}, 3);
  auto loss = [](Tape<double>& tape, std::span<const Var> p) {
    Var x = tape.leaf(Tensor<double>::matrix(4, 6, {0.3, -1.2, 0.7, 0.1, -0.4, 0.9,  //
                                                    1.1, 0.2, -0.8, 0.5, 0.6, -0.3,  //
                                                    -0.2, 0.4, 0.8, -1.0, 0.3, 0.2,  //
                                                    0.9, -0.5, 0.1, 0.7, -0.6, 0.4}));
    Var logits = tape.add_row(tape.matmul(x, p[0]), p[1]);
    return tape.cross_entropy_masked(logits, {1, 4, 0, 2}, {1, 1, 0, 1});
  };
  GradCheckResult res = check_gradients(store, loss, kH);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("layer norm gradient passes the finite-difference check") {
  ParamStore<double> store = random_store({{"x", {3, 6}}, {"g", {6}}, {"b", {6}}}, 4);
  auto loss = [](Tape<double>& tape, std::span<const Var> p) {
    Var y = tape.layer_norm_rows(p[0], p[1], p[2], 1e-5);
    return tape.mean_all(tape.gelu(y));
  };
  GradCheckResult res = check_gradients(store, loss, kH);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("attention-shaped composition passes the finite-difference check") {
  ParamStore<double> store = random_store({{"q", {4, 3}}, {"k", {4, 3}}, {"v", {4, 3}}}, 5);
  auto loss = [](Tape<double>& tape, std::span<const Var> p) {
    Var scores = tape.affine(tape.matmul_nt(p[0], p[1]), 1.0 / std::sqrt(3.0), 0.0);
    Var attn = tape.softmax_rows(scores);
    Var ctx = tape.matmul(attn, p[2]);
    return tape.mean_all(ctx);
  };
  GradCheckResult res = check_gradients(store, loss, kH);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("cosine rows gradient passes the finite-difference check") {
  ParamStore<double> store = random_store({{"a", {5, 4}}, {"b", {5, 4}}}, 6);
  auto loss = [](Tape<double>& tape, std::span<const Var> p) {
    Var cos = tape.cosine_rows(p[0], p[1]);
    return tape.mean_all(tape.affine(cos, -1.0, 1.0));
  };
  GradCheckResult res = check_gradients(store, loss, kH);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("kl of softmaxed rows passes the finite-difference check (both arguments)") {
  ParamStore<double> store = random_store({{"hp", {3, 5}}, {"hq", {3, 5}}}, 7);
  auto loss = [](Tape<double>& tape, std::span<const Var> p) {
    return tape.kl_divergence(tape.softmax_rows(p[0]), tape.softmax_rows(p[1]), {1, 1, 0});
  };
  GradCheckResult res = check_gradients(store, loss, kH);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("binary cross entropy gradient passes the finite-difference check") {
  ParamStore<double> store = random_store({{"w", {4, 1}}}, 8);
  auto loss = [](Tape<double>& tape, std::span<const Var> p) {
    Var x = tape.leaf(Tensor<double>::matrix(3, 4, {0.5, -0.2, 0.8, 0.1,  //
                                                    -0.7, 0.3, 0.2, -0.4, //
                                                    0.6, 0.9, -0.1, 0.5}));
    Var z = tape.matmul(x, p[0]);
    return tape.binary_ce_logits(z, {1, 0, 1}, {1, 1, 1});
  };
  GradCheckResult res = check_gradients(store, loss, kH);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gather and concat gradients pass the finite-difference check") {
  ParamStore<double> store = random_store({{"e", {6, 3}}}, 9);
  auto loss = [](Tape<double>& tape, std::span<const Var> p) {
    Var g = tape.gather_rows(p[0], {0, 2, 2, 5});
    Var a = tape.slice_rows(g, 0, 2);
    Var b = tape.slice_rows(g, 2, 2);
    Var joined = tape.concat_cols({a, b});
    return tape.mean_all(tape.gelu(joined));
  };
  GradCheckResult res = check_gradients(store, loss, kH);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("non-finite loss is reported as a check failure") {
  ParamStore<double> store = random_store({{"p", {2}}}, 10);
  auto loss = [](Tape<double>& tape, std::span<const Var>) {
    return tape.leaf(Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN()));
  };
  CHECK_THROWS_AS(check_gradients(store, loss, kH), std::runtime_error);
}
