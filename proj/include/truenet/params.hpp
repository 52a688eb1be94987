#pragma once

#include <string>
#include <vector>

#include "truenet/tape.hpp"
#include "truenet/tensor.hpp"

namespace truenet {

// Named parameter tensors in a fixed insertion order. The order defines the
// checkpoint manifest, the Adam moment layout and the Var layout each step.
template <typename T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;

  int add(std::string name, Tensor<T> value) {
    names.push_back(std::move(name));
    values.push_back(std::move(value));
    return static_cast<int>(values.size() - 1);
  }
  int find(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
  size_t size() const { return values.size(); }
  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& t : values) n += t.numel();
    return n;
  }

  // Registers every parameter on the tape as a differentiable leaf; the
  // returned handles are index-aligned with the store.
  std::vector<Var> push_all(Tape<T>& tape, bool requires_grad = true) const {
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const auto& t : values) vars.push_back(tape.leaf(t, requires_grad));
    return vars;
  }
};

extern template struct ParamStore<float>;
extern template struct ParamStore<double>;

}  // namespace truenet
