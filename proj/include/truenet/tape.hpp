#pragma once

#include <functional>
#include <span>
#include <vector>

#include "truenet/tensor.hpp"

namespace truenet {

// Handle into a Tape. Cheap to copy; only meaningful for the tape that
// created it.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode gradient tape. Ops append nodes in topological order; calling
// backward(loss) replays the recorded backward rules in reverse and
// accumulates gradients into every node that requires them.
//
// All forward kernels are guarded so finite inputs produce finite outputs
// (max-subtracted softmax, logsumexp cross entropy, epsilon inside the KL
// log). Accumulation order is fixed, so results are bitwise reproducible.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor<T> value, bool requires_grad = false);

  // -- core linear algebra ------------------------------------------------
  Var matmul(Var a, Var b);     // [m×k]·[k×n] -> [m×n]
  Var matmul_nt(Var a, Var b);  // a·bᵀ: [m×k]·[n×k]ᵀ -> [m×n]
  Var add(Var a, Var b);        // same shape
  Var add_row(Var a, Var bias);  // [m×n] + [n], bias broadcast over rows
  Var affine(Var a, T mul, T addend);  // elementwise mul*x + addend

  // -- structural ---------------------------------------------------------
  Var slice_rows(Var a, int64_t start, int64_t len);
  Var slice_cols(Var a, int64_t start, int64_t len);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var gather_rows(Var a, std::vector<int32_t> idx);  // backward scatter-adds

  // -- nonlinearities -----------------------------------------------------
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var x, Var gain, Var bias, T eps);
  Var gelu(Var x);

  // -- reductions / losses ------------------------------------------------
  Var mean_all(Var x);
  Var cosine(Var u, Var v);          // rank-1 u,v -> scalar
  Var cosine_rows(Var a, Var b);     // [n×d],[n×d] -> [n]
  // Mean of -log softmax(logits)[label] over rows with active != 0.
  // Inactive rows contribute neither loss nor gradient. No active row -> 0.
  Var cross_entropy_masked(Var logits, std::vector<int32_t> labels, std::vector<uint8_t> active);
  // Mean over active rows of sum_j p log((p+eps)/(q+eps)); rank-1 inputs are
  // treated as a single row.
  Var kl_divergence(Var p, Var q, std::vector<uint8_t> active = {});
  // Mean over active rows of -[y log sigma(z) + (1-y) log(1-sigma(z))];
  // logits may be [n] or [n×1].
  Var binary_ce_logits(Var logits, std::vector<uint8_t> labels, std::vector<uint8_t> active);

  void backward(Var loss);

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  // Zero tensor if the node never received a gradient.
  const Tensor<T>& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  size_t size() const { return nodes_.size(); }

  static constexpr T kKlEpsilon = T(1e-12);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until touched by backward
    std::function<void(Tape&)> back;
    bool requires_grad = false;
  };

  Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> back);
  Tensor<T>& grad_buf(Var v);  // allocates zeros on first touch
  const Tensor<T>& val(Var v) const { return nodes_[v.id].value; }
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  void check_var(Var v, const char* op) const;

  std::vector<Node> nodes_;
  mutable Tensor<T> zero_like_;  // scratch returned by grad() for untouched nodes
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace truenet
