#include "truenet/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace truenet {

namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const EMat<T>>;

template <typename T>
CMapM<T> cmap(const Tensor<T>& t) {
  return CMapM<T>(t.data.data(), t.rows(), t.cols());
}
template <typename T>
MapM<T> map(Tensor<T>& t) {
  return MapM<T>(t.data.data(), t.rows(), t.cols());
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected rank-2, got " + shape_str(t.shape));
}

// Numerically stable log(1 + e^x).
template <typename T>
T softplus(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

template <typename T>
void Tape<T>::check_var(Var v, const char* op) const {
  if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
    throw std::logic_error(std::string(op) + ": invalid tape handle");
}

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buf(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
  return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  check_var(v, "grad");
  const Node& n = nodes_[v.id];
  if (!n.grad.data.empty()) return n.grad;
  zero_like_ = Tensor<T>::zeros(n.value.shape);
  return zero_like_;
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  check_var(a, "matmul");
  check_var(b, "matmul");
  const Tensor<T>& A = val(a);
  const Tensor<T>& B = val(b);
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  Tensor<T> C = Tensor<T>::zeros({A.rows(), B.cols()});
  map(C).noalias() = cmap(A) * cmap(B);
  const bool req = needs(a) || needs(b);
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, b, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      if (t.needs(a)) map(t.grad_buf(a)).noalias() += cmap(g) * cmap(t.val(b)).transpose();
      if (t.needs(b)) map(t.grad_buf(b)).noalias() += cmap(t.val(a)).transpose() * cmap(g);
    };
  return out;
}

template <typename T>
Var Tape<T>::matmul_nt(Var a, Var b) {
  check_var(a, "matmul_nt");
  check_var(b, "matmul_nt");
  const Tensor<T>& A = val(a);
  const Tensor<T>& B = val(b);
  require_rank2(A, "matmul_nt");
  require_rank2(B, "matmul_nt");
  if (A.cols() != B.cols())
    throw std::invalid_argument("matmul_nt: inner dimensions disagree " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  Tensor<T> C = Tensor<T>::zeros({A.rows(), B.rows()});
  map(C).noalias() = cmap(A) * cmap(B).transpose();
  const bool req = needs(a) || needs(b);
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, b, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      if (t.needs(a)) map(t.grad_buf(a)).noalias() += cmap(g) * cmap(t.val(b));
      if (t.needs(b)) map(t.grad_buf(b)).noalias() += cmap(g).transpose() * cmap(t.val(a));
    };
  return out;
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  check_var(a, "add");
  check_var(b, "add");
  const Tensor<T>& A = val(a);
  const Tensor<T>& B = val(b);
  if (!A.same_shape(B))
    throw std::invalid_argument("add: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  Tensor<T> C = A;
  for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
  const bool req = needs(a) || needs(b);
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, b, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      if (t.needs(a)) {
        Tensor<T>& ga = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.needs(b)) {
        Tensor<T>& gb = t.grad_buf(b);
        for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::add_row(Var a, Var bias) {
  check_var(a, "add_row");
  check_var(bias, "add_row");
  const Tensor<T>& A = val(a);
  const Tensor<T>& B = val(bias);
  require_rank2(A, "add_row");
  if (B.rank() != 1 || B.shape[0] != A.cols())
    throw std::invalid_argument("add_row: bias shape " + shape_str(B.shape) + " vs matrix " + shape_str(A.shape));
  Tensor<T> C = A;
  const int64_t cols = A.cols();
  for (int64_t r = 0; r < A.rows(); ++r)
    for (int64_t c = 0; c < cols; ++c) C.data[r * cols + c] += B.data[c];
  const bool req = needs(a) || needs(bias);
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, bias, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      const int64_t cols = g.cols();
      if (t.needs(a)) {
        Tensor<T>& ga = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.needs(bias)) {
        Tensor<T>& gb = t.grad_buf(bias);
        for (int64_t r = 0; r < g.rows(); ++r)
          for (int64_t c = 0; c < cols; ++c) gb.data[c] += g.data[r * cols + c];
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::affine(Var a, T mul, T addend) {
  check_var(a, "affine");
  Tensor<T> C = val(a);
  for (T& v : C.data) v = mul * v + addend;
  const bool req = needs(a);
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, mul, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      Tensor<T>& ga = t.grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += mul * g.data[i];
    };
  return out;
}

template <typename T>
Var Tape<T>::slice_rows(Var a, int64_t start, int64_t len) {
  check_var(a, "slice_rows");
  const Tensor<T>& A = val(a);
  require_rank2(A, "slice_rows");
  if (start < 0 || len < 0 || start + len > A.rows()) throw std::invalid_argument("slice_rows: range out of bounds");
  const int64_t cols = A.cols();
  Tensor<T> C = Tensor<T>::zeros({len, cols});
  std::copy_n(A.data.begin() + start * cols, len * cols, C.data.begin());
  const bool req = needs(a);
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, start, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      Tensor<T>& ga = t.grad_buf(a);
      const int64_t cols = g.cols();
      for (size_t i = 0; i < g.data.size(); ++i) ga.data[start * cols + i] += g.data[i];
    };
  return out;
}

template <typename T>
Var Tape<T>::slice_cols(Var a, int64_t start, int64_t len) {
  check_var(a, "slice_cols");
  const Tensor<T>& A = val(a);
  require_rank2(A, "slice_cols");
  if (start < 0 || len < 0 || start + len > A.cols()) throw std::invalid_argument("slice_cols: range out of bounds");
  Tensor<T> C = Tensor<T>::zeros({A.rows(), len});
  for (int64_t r = 0; r < A.rows(); ++r)
    std::copy_n(A.data.begin() + r * A.cols() + start, len, C.data.begin() + r * len);
  const bool req = needs(a);
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, start, len, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      Tensor<T>& ga = t.grad_buf(a);
      const int64_t acols = ga.cols();
      for (int64_t r = 0; r < g.rows(); ++r)
        for (int64_t c = 0; c < len; ++c) ga.data[r * acols + start + c] += g.data[r * len + c];
    };
  return out;
}

template <typename T>
Var Tape<T>::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  for (Var p : parts) check_var(p, "concat_rows");
  const int64_t cols = val(parts[0]).cols();
  int64_t rows = 0;
  bool req = false;
  for (Var p : parts) {
    const Tensor<T>& t = val(p);
    require_rank2(t, "concat_rows");
    if (t.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += t.rows();
    req = req || needs(p);
  }
  Tensor<T> C = Tensor<T>::zeros({rows, cols});
  int64_t off = 0;
  for (Var p : parts) {
    const Tensor<T>& t = val(p);
    std::copy(t.data.begin(), t.data.end(), C.data.begin() + off);
    off += t.numel();
  }
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [parts, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      int64_t off = 0;
      for (Var p : parts) {
        const int64_t n = t.val(p).numel();
        if (t.needs(p)) {
          Tensor<T>& gp = t.grad_buf(p);
          for (int64_t i = 0; i < n; ++i) gp.data[i] += g.data[off + i];
        }
        off += n;
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  for (Var p : parts) check_var(p, "concat_cols");
  const int64_t rows = val(parts[0]).rows();
  int64_t cols = 0;
  bool req = false;
  for (Var p : parts) {
    const Tensor<T>& t = val(p);
    require_rank2(t, "concat_cols");
    if (t.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += t.cols();
    req = req || needs(p);
  }
  Tensor<T> C = Tensor<T>::zeros({rows, cols});
  int64_t off = 0;
  for (Var p : parts) {
    const Tensor<T>& t = val(p);
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(t.data.begin() + r * t.cols(), t.cols(), C.data.begin() + r * cols + off);
    off += t.cols();
  }
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [parts, cols, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      int64_t off = 0;
      for (Var p : parts) {
        const int64_t pc = t.val(p).cols();
        if (t.needs(p)) {
          Tensor<T>& gp = t.grad_buf(p);
          for (int64_t r = 0; r < g.rows(); ++r)
            for (int64_t c = 0; c < pc; ++c) gp.data[r * pc + c] += g.data[r * cols + off + c];
        }
        off += pc;
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::gather_rows(Var a, std::vector<int32_t> idx) {
  check_var(a, "gather_rows");
  const Tensor<T>& A = val(a);
  require_rank2(A, "gather_rows");
  const int64_t cols = A.cols();
  for (int32_t i : idx)
    if (i < 0 || i >= A.rows())
      throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of " + std::to_string(A.rows()));
  Tensor<T> C = Tensor<T>::zeros({static_cast<int64_t>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(A.data.begin() + static_cast<int64_t>(idx[r]) * cols, cols,
                C.data.begin() + static_cast<int64_t>(r) * cols);
  const bool req = needs(a);
  Var out = push(std::move(C), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, idx = std::move(idx), out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      Tensor<T>& ga = t.grad_buf(a);
      const int64_t cols = g.cols();
      for (size_t r = 0; r < idx.size(); ++r)
        for (int64_t c = 0; c < cols; ++c)
          ga.data[static_cast<int64_t>(idx[r]) * cols + c] += g.data[static_cast<int64_t>(r) * cols + c];
    };
  return out;
}

template <typename T>
Var Tape<T>::softmax_rows(Var a) {
  check_var(a, "softmax_rows");
  const Tensor<T>& A = val(a);
  require_rank2(A, "softmax_rows");
  Tensor<T> Y = A;
  const int64_t cols = A.cols();
  for (int64_t r = 0; r < A.rows(); ++r) {
    T* row = Y.data.data() + r * cols;
    T mx = row[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    T sum = T(0);
    for (int64_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (int64_t c = 0; c < cols; ++c) row[c] /= sum;
  }
  const bool req = needs(a);
  Var out = push(std::move(Y), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, out](Tape& t) {
      // dx = (dy - <dy, y>) * y, rowwise
      const Tensor<T>& g = t.nodes_[out.id].grad;
      const Tensor<T>& y = t.val(out);
      Tensor<T>& ga = t.grad_buf(a);
      const int64_t cols = y.cols();
      for (int64_t r = 0; r < y.rows(); ++r) {
        const T* gr = g.data.data() + r * cols;
        const T* yr = y.data.data() + r * cols;
        T dot = T(0);
        for (int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
        T* gar = ga.data.data() + r * cols;
        for (int64_t c = 0; c < cols; ++c) gar[c] += (gr[c] - dot) * yr[c];
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::layer_norm_rows(Var x, Var gain, Var bias, T eps) {
  check_var(x, "layer_norm");
  check_var(gain, "layer_norm");
  check_var(bias, "layer_norm");
  if (eps <= T(0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const Tensor<T>& X = val(x);
  require_rank2(X, "layer_norm");
  const Tensor<T>& G = val(gain);
  const Tensor<T>& B = val(bias);
  const int64_t cols = X.cols();
  if (G.rank() != 1 || G.shape[0] != cols || B.rank() != 1 || B.shape[0] != cols)
    throw std::invalid_argument("layer_norm: gain/bias must be rank-1 of width " + std::to_string(cols));
  Tensor<T> Y = Tensor<T>::zeros(X.shape);
  auto xhat = std::make_shared<Tensor<T>>(Tensor<T>::zeros(X.shape));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(X.rows()));
  for (int64_t r = 0; r < X.rows(); ++r) {
    const T* xr = X.data.data() + r * cols;
    T* yr = Y.data.data() + r * cols;
    T* hr = xhat->data.data() + r * cols;
    T mean = T(0);
    for (int64_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= T(cols);
    T var = T(0);
    for (int64_t c = 0; c < cols; ++c) {
      const T d = xr[c] - mean;
      var += d * d;
    }
    var /= T(cols);
    const T inv = T(1) / std::sqrt(var + eps);
    (*invstd)[static_cast<size_t>(r)] = inv;
    for (int64_t c = 0; c < cols; ++c) {
      hr[c] = (xr[c] - mean) * inv;
      yr[c] = hr[c] * G.data[c] + B.data[c];
    }
  }
  const bool req = needs(x) || needs(gain) || needs(bias);
  Var out = push(std::move(Y), req, nullptr);
  if (req)
    nodes_[out.id].back = [x, gain, bias, out, xhat, invstd](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      const Tensor<T>& G = t.val(gain);
      const int64_t cols = g.cols();
      if (t.needs(gain)) {
        Tensor<T>& gg = t.grad_buf(gain);
        for (int64_t r = 0; r < g.rows(); ++r)
          for (int64_t c = 0; c < cols; ++c) gg.data[c] += g.data[r * cols + c] * xhat->data[r * cols + c];
      }
      if (t.needs(bias)) {
        Tensor<T>& gb = t.grad_buf(bias);
        for (int64_t r = 0; r < g.rows(); ++r)
          for (int64_t c = 0; c < cols; ++c) gb.data[c] += g.data[r * cols + c];
      }
      if (t.needs(x)) {
        Tensor<T>& gx = t.grad_buf(x);
        for (int64_t r = 0; r < g.rows(); ++r) {
          const T* gr = g.data.data() + r * cols;
          const T* hr = xhat->data.data() + r * cols;
          const T inv = (*invstd)[static_cast<size_t>(r)];
          T mean_dh = T(0), mean_dh_h = T(0);
          for (int64_t c = 0; c < cols; ++c) {
            const T dh = gr[c] * G.data[c];
            mean_dh += dh;
            mean_dh_h += dh * hr[c];
          }
          mean_dh /= T(cols);
          mean_dh_h /= T(cols);
          T* gxr = gx.data.data() + r * cols;
          for (int64_t c = 0; c < cols; ++c) {
            const T dh = gr[c] * G.data[c];
            gxr[c] += inv * (dh - mean_dh - hr[c] * mean_dh_h);
          }
        }
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::gelu(Var x) {
  check_var(x, "gelu");
  Tensor<T> Y = val(x);
  constexpr T kC = T(0.7978845608028653558798921198687637);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  for (T& v : Y.data) {
    const T u = kC * (v + kA * v * v * v);
    v = T(0.5) * v * (T(1) + std::tanh(u));
  }
  const bool req = needs(x);
  Var out = push(std::move(Y), req, nullptr);
  if (req)
    nodes_[out.id].back = [x, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      const Tensor<T>& X = t.val(x);
      Tensor<T>& gx = t.grad_buf(x);
      for (size_t i = 0; i < g.data.size(); ++i) {
        const T v = X.data[i];
        const T u = kC * (v + kA * v * v * v);
        const T th = std::tanh(u);
        const T du = kC * (T(1) + T(3) * kA * v * v);
        const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
        gx.data[i] += g.data[i] * d;
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::mean_all(Var x) {
  check_var(x, "mean_all");
  const Tensor<T>& X = val(x);
  T s = T(0);
  for (T v : X.data) s += v;
  const int64_t n = X.numel();
  s /= T(n);
  const bool req = needs(x);
  Var out = push(Tensor<T>::scalar(s), req, nullptr);
  if (req)
    nodes_[out.id].back = [x, n, out](Tape& t) {
      const T g = t.nodes_[out.id].grad.data[0] / T(n);
      Tensor<T>& gx = t.grad_buf(x);
      for (T& v : gx.data) v += g;
    };
  return out;
}

template <typename T>
Var Tape<T>::cosine(Var u, Var v) {
  check_var(u, "cosine");
  check_var(v, "cosine");
  const Tensor<T>& U = val(u);
  const Tensor<T>& V = val(v);
  if (U.rank() != 1 || V.rank() != 1 || U.shape[0] != V.shape[0])
    throw std::invalid_argument("cosine: expected equal-length rank-1 inputs");
  T dot = T(0), nu = T(0), nv = T(0);
  for (int64_t i = 0; i < U.shape[0]; ++i) {
    dot += U.data[i] * V.data[i];
    nu += U.data[i] * U.data[i];
    nv += V.data[i] * V.data[i];
  }
  if (nu == T(0) || nv == T(0)) throw std::domain_error("cosine: degenerate zero-norm vector");
  const T na = std::sqrt(nu), nb = std::sqrt(nv);
  // rounding can push |c| a few ulp past 1 for (anti)parallel inputs
  const T c = std::clamp(dot / (na * nb), T(-1), T(1));
  const bool req = needs(u) || needs(v);
  Var out = push(Tensor<T>::scalar(c), req, nullptr);
  if (req)
    nodes_[out.id].back = [u, v, c, na, nb, out](Tape& t) {
      const T g = t.nodes_[out.id].grad.data[0];
      const Tensor<T>& U = t.val(u);
      const Tensor<T>& V = t.val(v);
      const int64_t d = U.shape[0];
      if (t.needs(u)) {
        Tensor<T>& gu = t.grad_buf(u);
        for (int64_t i = 0; i < d; ++i) gu.data[i] += g * (V.data[i] / (na * nb) - c * U.data[i] / (na * na));
      }
      if (t.needs(v)) {
        Tensor<T>& gv = t.grad_buf(v);
        for (int64_t i = 0; i < d; ++i) gv.data[i] += g * (U.data[i] / (na * nb) - c * V.data[i] / (nb * nb));
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::cosine_rows(Var a, Var b) {
  check_var(a, "cosine_rows");
  check_var(b, "cosine_rows");
  const Tensor<T>& A = val(a);
  const Tensor<T>& B = val(b);
  require_rank2(A, "cosine_rows");
  if (!A.same_shape(B)) throw std::invalid_argument("cosine_rows: shape mismatch");
  const int64_t n = A.rows(), d = A.cols();
  Tensor<T> Y = Tensor<T>::zeros({n});
  auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(2 * n));
  for (int64_t r = 0; r < n; ++r) {
    const T* ar = A.data.data() + r * d;
    const T* br = B.data.data() + r * d;
    T dot = T(0), na2 = T(0), nb2 = T(0);
    for (int64_t c = 0; c < d; ++c) {
      dot += ar[c] * br[c];
      na2 += ar[c] * ar[c];
      nb2 += br[c] * br[c];
    }
    if (na2 == T(0) || nb2 == T(0))
      throw std::domain_error("cosine_rows: degenerate zero-norm row " + std::to_string(r));
    const T na = std::sqrt(na2), nb = std::sqrt(nb2);
    (*norms)[static_cast<size_t>(2 * r)] = na;
    (*norms)[static_cast<size_t>(2 * r + 1)] = nb;
    Y.data[r] = std::clamp(dot / (na * nb), T(-1), T(1));
  }
  const bool req = needs(a) || needs(b);
  Var out = push(std::move(Y), req, nullptr);
  if (req)
    nodes_[out.id].back = [a, b, norms, out](Tape& t) {
      const Tensor<T>& g = t.nodes_[out.id].grad;
      const Tensor<T>& y = t.val(out);
      const Tensor<T>& A = t.val(a);
      const Tensor<T>& B = t.val(b);
      const int64_t n = A.rows(), d = A.cols();
      for (int64_t r = 0; r < n; ++r) {
        const T gr = g.data[r];
        if (gr == T(0)) continue;
        const T c = y.data[r];
        const T na = (*norms)[static_cast<size_t>(2 * r)];
        const T nb = (*norms)[static_cast<size_t>(2 * r + 1)];
        const T* ar = A.data.data() + r * d;
        const T* br = B.data.data() + r * d;
        if (t.needs(a)) {
          T* ga = t.grad_buf(a).data.data() + r * d;
          for (int64_t i = 0; i < d; ++i) ga[i] += gr * (br[i] / (na * nb) - c * ar[i] / (na * na));
        }
        if (t.needs(b)) {
          T* gb = t.grad_buf(b).data.data() + r * d;
          for (int64_t i = 0; i < d; ++i) gb[i] += gr * (ar[i] / (na * nb) - c * br[i] / (nb * nb));
        }
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::cross_entropy_masked(Var logits, std::vector<int32_t> labels, std::vector<uint8_t> active) {
  check_var(logits, "cross_entropy_masked");
  const Tensor<T>& L = val(logits);
  require_rank2(L, "cross_entropy_masked");
  const int64_t n = L.rows(), vsz = L.cols();
  if (static_cast<int64_t>(labels.size()) != n || static_cast<int64_t>(active.size()) != n)
    throw std::invalid_argument("cross_entropy_masked: labels/active length must equal row count");
  int64_t count = 0;
  T loss = T(0);
  for (int64_t r = 0; r < n; ++r) {
    if (!active[r]) continue;
    if (labels[r] < 0 || labels[r] >= vsz)
      throw std::out_of_range("cross_entropy_masked: label " + std::to_string(labels[r]) +
                              " out of vocab range at row " + std::to_string(r));
    const T* row = L.data.data() + r * vsz;
    T mx = row[0];
    for (int64_t c = 1; c < vsz; ++c) mx = std::max(mx, row[c]);
    T sum = T(0);
    for (int64_t c = 0; c < vsz; ++c) sum += std::exp(row[c] - mx);
    loss += mx + std::log(sum) - row[labels[r]];
    ++count;
  }
  if (count > 0) loss /= T(count);
  const bool req = needs(logits) && count > 0;
  Var out = push(Tensor<T>::scalar(loss), req, nullptr);
  if (req)
    nodes_[out.id].back = [logits, labels = std::move(labels), active = std::move(active), count, out](Tape& t) {
      const T g = t.nodes_[out.id].grad.data[0];
      const Tensor<T>& L = t.val(logits);
      Tensor<T>& gl = t.grad_buf(logits);
      const int64_t vsz = L.cols();
      const T scale = g / T(count);
      for (int64_t r = 0; r < L.rows(); ++r) {
        if (!active[static_cast<size_t>(r)]) continue;
        const T* row = L.data.data() + r * vsz;
        T* grow = gl.data.data() + r * vsz;
        T mx = row[0];
        for (int64_t c = 1; c < vsz; ++c) mx = std::max(mx, row[c]);
        T sum = T(0);
        for (int64_t c = 0; c < vsz; ++c) sum += std::exp(row[c] - mx);
        for (int64_t c = 0; c < vsz; ++c) grow[c] += scale * std::exp(row[c] - mx) / sum;
        grow[labels[static_cast<size_t>(r)]] -= scale;
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::kl_divergence(Var p, Var q, std::vector<uint8_t> active) {
  check_var(p, "kl_divergence");
  check_var(q, "kl_divergence");
  const Tensor<T>& P0 = val(p);
  const Tensor<T>& Q0 = val(q);
  if (P0.shape != Q0.shape) throw std::invalid_argument("kl_divergence: shape mismatch");
  const int64_t n = (P0.rank() == 1) ? 1 : P0.rows();
  const int64_t d = (P0.rank() == 1) ? P0.shape[0] : P0.cols();
  if (P0.rank() > 2) throw std::invalid_argument("kl_divergence: expected rank-1 or rank-2");
  if (active.empty()) active.assign(static_cast<size_t>(n), 1);
  if (static_cast<int64_t>(active.size()) != n)
    throw std::invalid_argument("kl_divergence: active length must equal row count");
  for (T v : P0.data)
    if (v < T(0)) throw std::domain_error("kl_divergence: negative entry in p");
  for (T v : Q0.data)
    if (v < T(0)) throw std::domain_error("kl_divergence: negative entry in q");
  const T eps = kKlEpsilon;
  int64_t count = 0;
  T loss = T(0);
  for (int64_t r = 0; r < n; ++r) {
    if (!active[static_cast<size_t>(r)]) continue;
    const T* pr = P0.data.data() + r * d;
    const T* qr = Q0.data.data() + r * d;
    for (int64_t c = 0; c < d; ++c) loss += pr[c] * std::log((pr[c] + eps) / (qr[c] + eps));
    ++count;
  }
  if (count > 0) loss /= T(count);
  const bool req = (needs(p) || needs(q)) && count > 0;
  Var out = push(Tensor<T>::scalar(loss), req, nullptr);
  if (req)
    nodes_[out.id].back = [p, q, active = std::move(active), count, n, d, eps, out](Tape& t) {
      const T g = t.nodes_[out.id].grad.data[0];
      const Tensor<T>& P = t.val(p);
      const Tensor<T>& Q = t.val(q);
      const T scale = g / T(count);
      for (int64_t r = 0; r < n; ++r) {
        if (!active[static_cast<size_t>(r)]) continue;
        const T* pr = P.data.data() + r * d;
        const T* qr = Q.data.data() + r * d;
        if (t.needs(p)) {
          T* gp = t.grad_buf(p).data.data() + r * d;
          for (int64_t c = 0; c < d; ++c)
            gp[c] += scale * (std::log((pr[c] + eps) / (qr[c] + eps)) + pr[c] / (pr[c] + eps));
        }
        if (t.needs(q)) {
          T* gq = t.grad_buf(q).data.data() + r * d;
          for (int64_t c = 0; c < d; ++c) gq[c] -= scale * pr[c] / (qr[c] + eps);
        }
      }
    };
  return out;
}

template <typename T>
Var Tape<T>::binary_ce_logits(Var logits, std::vector<uint8_t> labels, std::vector<uint8_t> active) {
  check_var(logits, "binary_ce_logits");
  const Tensor<T>& Z = val(logits);
  if (Z.rank() == 2 && Z.cols() != 1) throw std::invalid_argument("binary_ce_logits: expected [n] or [n×1]");
  const int64_t n = (Z.rank() == 2) ? Z.rows() : Z.shape[0];
  if (static_cast<int64_t>(labels.size()) != n || static_cast<int64_t>(active.size()) != n)
    throw std::invalid_argument("binary_ce_logits: labels/active length must equal row count");
  int64_t count = 0;
  T loss = T(0);
  for (int64_t r = 0; r < n; ++r) {
    if (!active[static_cast<size_t>(r)]) continue;
    const T z = Z.data[r];
    loss += softplus(z) - (labels[static_cast<size_t>(r)] ? z : T(0));
    ++count;
  }
  if (count > 0) loss /= T(count);
  const bool req = needs(logits) && count > 0;
  Var out = push(Tensor<T>::scalar(loss), req, nullptr);
  if (req)
    nodes_[out.id].back = [logits, labels = std::move(labels), active = std::move(active), count, n, out](Tape& t) {
      const T g = t.nodes_[out.id].grad.data[0];
      const Tensor<T>& Z = t.val(logits);
      Tensor<T>& gz = t.grad_buf(logits);
      const T scale = g / T(count);
      for (int64_t r = 0; r < n; ++r) {
        if (!active[static_cast<size_t>(r)]) continue;
        const T z = Z.data[r];
        const T s = (z >= T(0)) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
        gz.data[r] += scale * (s - (labels[static_cast<size_t>(r)] ? T(1) : T(0)));
      }
    };
  return out;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  check_var(loss, "backward");
  const Tensor<T>& L = val(loss);
  if (L.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(L.shape));
  grad_buf(loss).data[static_cast<size_t>(0)] = T(1);
  for (int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.data.empty() || !n.back) continue;
    n.back(*this);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace truenet
