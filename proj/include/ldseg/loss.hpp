#pragma once

#include <array>
#include <cmath>

#include "ldseg/nn_ops.hpp"
#include "ldseg/tensor.hpp"

// Composite training objective: weighted categorical cross entropy plus a
// weighted per-pixel Jaccard term, both linear in the class weights.
namespace ldseg::loss {

inline constexpr double kLogEps = 1e-7;      // lower clamp inside log
inline constexpr double kJaccardEps = 1e-7;  // smoothing of the 0/0 ratio

/// Per-class weights, indexed 0=background, 1=pipeline, 2=road, 3=cutline.
struct ClassWeights {
  std::array<double, 4> w{0.1, 0.3, 0.3, 0.3};

  void validate() const {
    for (double x : w)
      if (!(x > 0.0)) throw ValueError("class weights must be positive");
  }
};

namespace detail {

template <typename T>
void require_pair(const Tensor<T>& y, const Tensor<T>& y_hat) {
  if (y.ndim() != 4 || y.dim(1) != 4) throw ShapeError("loss: labels must be [B,4,H,W] one-hot");
  if (!y.same_shape(y_hat)) throw ShapeError("loss: label and prediction shapes disagree");
}

template <typename T>
void require_one_hot(const Tensor<T>& y) {
  const std::int64_t B = y.dim(0), C = y.dim(1), HW = y.dim(2) * y.dim(3);
  for (std::int64_t b = 0; b < B; ++b) {
    const T* p = y.data() + b * C * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      T sum{};
      for (std::int64_t c = 0; c < C; ++c) {
        const T v = p[c * HW + i];
        if (v != T{0} && v != T{1}) throw ValueError("loss: labels must be one-hot (0/1 entries)");
        sum += v;
      }
      if (sum != T{1}) throw ValueError("loss: labels must be one-hot (one class per pixel)");
    }
  }
}

}  // namespace detail

/// One-hot encoding of a label map, [B,S,S] -> [B,C,S,S].
template <typename T>
Tensor<T> one_hot(const Tensor<std::uint8_t>& labels, std::int64_t num_classes = 4) {
  if (labels.ndim() != 3) throw ShapeError("one_hot: labels must be [B,S,S]");
  const std::int64_t B = labels.dim(0), HW = labels.dim(1) * labels.dim(2);
  Tensor<T> y({B, num_classes, labels.dim(1), labels.dim(2)});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const std::int64_t c = labels[b * HW + i];
      if (c >= num_classes) throw ValueError("one_hot: label out of range");
      y[(b * num_classes + c) * HW + i] = T{1};
    }
  }
  return y;
}

/// Weighted categorical cross entropy, Eq.-style per-image mean over pixels,
/// then mean over the batch. `y_hat` holds softmax probabilities; they are
/// clamped to [kLogEps, 1] inside the log.
template <typename T>
double weighted_cross_entropy(const Tensor<T>& y, const Tensor<T>& y_hat,
                              const ClassWeights& weights) {
  detail::require_pair(y, y_hat);
  detail::require_one_hot(y);
  weights.validate();
  const std::int64_t B = y.dim(0), C = 4, HW = y.dim(2) * y.dim(3);
  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const T* py = y.data() + b * C * HW;
    const T* ps = y_hat.data() + b * C * HW;
    double img = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double wc = weights.w[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < HW; ++i) {
        if (py[c * HW + i] == T{0}) continue;
        const double p = std::clamp(static_cast<double>(ps[c * HW + i]), kLogEps, 1.0);
        img -= wc * std::log(p);
      }
    }
    total += img / static_cast<double>(HW);
  }
  return total / static_cast<double>(B);
}

/// Weighted Jaccard loss with per-pixel smoothed ratio
/// (y*yhat + eps) / (y + yhat - y*yhat + eps); exactly zero for a perfect
/// one-hot prediction.
template <typename T>
double weighted_jaccard(const Tensor<T>& y, const Tensor<T>& y_hat, const ClassWeights& weights) {
  detail::require_pair(y, y_hat);
  weights.validate();
  const std::int64_t B = y.dim(0), C = 4, HW = y.dim(2) * y.dim(3);
  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const T* py = y.data() + b * C * HW;
    const T* ps = y_hat.data() + b * C * HW;
    double img = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double wc = weights.w[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < HW; ++i) {
        const double yv = static_cast<double>(py[c * HW + i]);
        const double sv = static_cast<double>(ps[c * HW + i]);
        const double inter = yv * sv;
        const double uni = yv + sv - inter;
        img += wc * (1.0 - (inter + kJaccardEps) / (uni + kJaccardEps));
      }
    }
    total += img / static_cast<double>(HW);
  }
  return total / static_cast<double>(B);
}

template <typename T>
struct CompositeLoss {
  double total = 0.0, cross_entropy = 0.0, jaccard = 0.0;
  Tensor<T> grad_logits;
};

/// Composite loss on raw logits (the model's tanh outputs): softmax is applied
/// internally, the total is CE + Jaccard, and the analytic gradient w.r.t. the
/// logits is returned alongside.
template <typename T>
CompositeLoss<T> composite_loss(const Tensor<T>& y, const Tensor<T>& logits,
                                const ClassWeights& weights) {
  detail::require_pair(y, logits);
  detail::require_one_hot(y);
  weights.validate();
  const Tensor<T> s = nn::softmax_over_classes(logits);

  CompositeLoss<T> out;
  out.cross_entropy = weighted_cross_entropy(y, s, weights);
  out.jaccard = weighted_jaccard(y, s, weights);
  out.total = out.cross_entropy + out.jaccard;

  // dL/ds, both terms, then chain through the softmax Jacobian.
  const std::int64_t B = y.dim(0), C = 4, HW = y.dim(2) * y.dim(3);
  const double scale = 1.0 / (static_cast<double>(B) * static_cast<double>(HW));
  Tensor<T> grad_s(s.shape());
  for (std::int64_t b = 0; b < B; ++b) {
    const T* py = y.data() + b * C * HW;
    const T* ps = s.data() + b * C * HW;
    T* pg = grad_s.data() + b * C * HW;
    for (std::int64_t c = 0; c < C; ++c) {
      const double wc = weights.w[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < HW; ++i) {
        const double yv = static_cast<double>(py[c * HW + i]);
        const double sv = static_cast<double>(ps[c * HW + i]);
        double g = 0.0;
        // cross entropy: -wc*y/s, zero where the clamp is active
        if (yv != 0.0 && sv > kLogEps) g -= wc * yv / sv;
        // jaccard: -wc * d ratio / ds
        const double uni = yv + sv - yv * sv;
        const double denom = uni + kJaccardEps;
        const double dratio = (yv * denom - (yv * sv + kJaccardEps) * (1.0 - yv)) / (denom * denom);
        g -= wc * dratio;
        pg[c * HW + i] = static_cast<T>(g * scale);
      }
    }
  }
  out.grad_logits = nn::softmax_over_classes_backward(s, grad_s);
  return out;
}

}  // namespace ldseg::loss
