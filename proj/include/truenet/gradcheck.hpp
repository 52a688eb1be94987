#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include "truenet/params.hpp"
#include "truenet/tape.hpp"

namespace truenet {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t evaluated = 0;
};

// Central-difference check of the tape gradient for an arbitrary scalar loss
// built over the store's parameters. loss_fn must be a pure function of the
// parameter values: (Tape<T>&, std::span<const Var>) -> Var.
//
// Relative error uses |fd - an| / max(1, |fd|, |an|), so tiny gradients are
// compared absolutely and large ones relatively. Meaningful at 64 bits.
template <typename T, typename F>
GradCheckResult check_gradients(ParamStore<T>& params, F&& loss_fn, T h) {
  if (h <= T(0)) throw std::invalid_argument("check_gradients: h must be positive");

  auto eval = [&](bool want_grads, std::vector<Tensor<T>>* grads_out) -> T {
    Tape<T> tape;
    std::vector<Var> vars = params.push_all(tape, want_grads);
    Var loss = loss_fn(tape, std::span<const Var>(vars));
    const Tensor<T>& lv = tape.value(loss);
    if (lv.numel() != 1) throw std::invalid_argument("check_gradients: loss must be scalar");
    if (!std::isfinite(static_cast<double>(lv.data[0])))
      throw std::runtime_error("check_gradients: non-finite loss");
    if (want_grads) {
      tape.backward(loss);
      grads_out->clear();
      for (Var v : vars) grads_out->push_back(tape.grad(v));
    }
    return lv.data[0];
  };

  std::vector<Tensor<T>> analytic;
  eval(true, &analytic);

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = params.values[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      const T saved = p.data[i];
      p.data[i] = saved + h;
      const T lp = eval(false, nullptr);
      p.data[i] = saved - h;
      const T lm = eval(false, nullptr);
      p.data[i] = saved;
      const double fd = (static_cast<double>(lp) - static_cast<double>(lm)) / (2.0 * static_cast<double>(h));
      const double an = static_cast<double>(analytic[pi].data[i]);
      const double denom = std::max({1.0, std::fabs(fd), std::fabs(an)});
      const double rel = std::fabs(fd - an) / denom;
      ++res.evaluated;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = params.names[pi];
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace truenet
