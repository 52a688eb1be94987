#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace truenet {

// Dense row-major array of real values. Rank 1 and 2 cover everything the
// tape produces; scalars are stored as shape {1}.
template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel() != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static Tensor zeros(std::vector<int64_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(t.numel()), T(0));
    return t;
  }
  static Tensor full(std::vector<int64_t> s, T v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }
  static Tensor row(std::vector<T> v) {
    int64_t n = static_cast<int64_t>(v.size());
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(int64_t r, int64_t c, std::vector<T> v) { return Tensor({r, c}, std::move(v)); }

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return shape.empty() ? 1 : n;
  }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t rows() const {
    if (rank() != 2) throw std::logic_error("tensor: rows() on rank " + std::to_string(rank()));
    return shape[0];
  }
  int64_t cols() const {
    if (rank() != 2) throw std::logic_error("tensor: cols() on rank " + std::to_string(rank()));
    return shape[1];
  }
  T& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  T at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }
  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  T operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Token-id matrix, row-major. Rows are sequences, cols are positions.
struct IdMat {
  int32_t rows = 0;
  int32_t cols = 0;
  std::vector<int32_t> v;

  IdMat() = default;
  IdMat(int32_t r, int32_t c, int32_t fill = 0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}
  int32_t& at(int32_t r, int32_t c) { return v[static_cast<size_t>(r) * cols + c]; }
  int32_t at(int32_t r, int32_t c) const { return v[static_cast<size_t>(r) * cols + c]; }
  int64_t numel() const { return static_cast<int64_t>(rows) * cols; }
};

}  // namespace truenet
