#pragma once

#include <cmath>
#include <string>

#include "ldseg/tensor.hpp"

namespace ldseg::nn {

/// A learnable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  std::string name;

  Parameter() = default;
  Parameter(Tensor<T> v, std::string n)
      : value(std::move(v)), grad(value.shape()), name(std::move(n)) {}

  void zero_grad() { grad.fill(T{}); }
};

template <typename T>
struct AdamState {
  Tensor<T> m, v;
  std::int64_t step_count = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  explicit AdamState(const std::vector<std::int64_t>& shape) : m(shape), v(shape) {}
};

/// One bias-corrected Adam update. The gradient is left untouched; zeroing
/// between steps is the caller's job. Rejects non-finite gradients.
template <typename T>
void adam_step(Parameter<T>& param, AdamState<T>& state, double lr) {
  if (!param.value.same_shape(state.m))
    throw ShapeError("adam_step: state shape does not match parameter " + param.name);
  if (!all_finite(param.grad))
    throw NumericError("adam_step: non-finite gradient in parameter " + param.name);

  state.step_count += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (std::int64_t i = 0; i < param.value.numel(); ++i) {
    const double g = static_cast<double>(param.grad[i]);
    const double m = b1 * static_cast<double>(state.m[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(state.v[i]) + (1.0 - b2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    param.value[i] = static_cast<T>(static_cast<double>(param.value[i]) -
                                    lr * mhat / (std::sqrt(vhat) + state.epsilon));
  }
}

}  // namespace ldseg::nn
