#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "emoji/errors.hpp"
#include "emoji/numeric/tensor.hpp"

namespace emoji::numeric {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for an ordered parameter list. The moment
/// tensors are bound to parameter positions on the first step.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::size_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : config(c) {}
};

/// One bias-corrected Adam update; increments t and zeroes every gradient.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw NumericError("adam_step: parameter list changed between steps");
  ++state.t;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.shape() != p.value.shape()) throw NumericError("adam_step: moment shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
    }
    require_finite(p.value, "adam_step");
    p.zero_grad();
  }
}

template <typename T>
void adam_step(std::vector<Parameter<T>*>& params, AdamState<T>& state) {
  adam_step(std::span<Parameter<T>* const>(params), state);
}

}  // namespace emoji::numeric
