#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "ldseg/gemm.hpp"
#include "ldseg/tensor.hpp"

// Layer primitives: forward passes and exact analytic backward passes.
// All functions are pure over their arguments (batch-norm mutates only the
// explicitly passed running statistics) and run sequentially with a fixed
// accumulation order, so results are bitwise reproducible.
namespace ldseg::nn {

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw ShapeError(msg);
}

// col[(Cin*3*3), (H*W)] from one [Cin,H,W] image plane set, zero padding 1.
template <typename T>
void im2col3x3(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, T* col) {
  const std::int64_t HW = H * W;
  std::int64_t k = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    const T* plane = x + c * HW;
    for (std::int64_t ki = -1; ki <= 1; ++ki) {
      for (std::int64_t kj = -1; kj <= 1; ++kj, ++k) {
        T* row = col + k * HW;
        for (std::int64_t i = 0; i < H; ++i) {
          T* dst = row + i * W;
          const std::int64_t si = i + ki;
          if (si < 0 || si >= H) {
            std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(W));
            continue;
          }
          const T* src = plane + si * W;
          if (kj == 0) {
            std::memcpy(dst, src, sizeof(T) * static_cast<std::size_t>(W));
          } else if (kj < 0) {
            dst[0] = T{};
            std::memcpy(dst + 1, src, sizeof(T) * static_cast<std::size_t>(W - 1));
          } else {
            std::memcpy(dst, src + 1, sizeof(T) * static_cast<std::size_t>(W - 1));
            dst[W - 1] = T{};
          }
        }
      }
    }
  }
}

// Transpose of im2col3x3: scatter-add col rows back into an image.
template <typename T>
void col2im3x3(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, T* x) {
  const std::int64_t HW = H * W;
  std::int64_t k = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    T* plane = x + c * HW;
    for (std::int64_t ki = -1; ki <= 1; ++ki) {
      for (std::int64_t kj = -1; kj <= 1; ++kj, ++k) {
        const T* row = col + k * HW;
        for (std::int64_t i = 0; i < H; ++i) {
          const std::int64_t si = i + ki;
          if (si < 0 || si >= H) continue;
          const T* src = row + i * W;
          T* dst = plane + si * W;
          const std::int64_t j0 = std::max<std::int64_t>(0, -kj);
          const std::int64_t j1 = std::min(W, W - kj);
          for (std::int64_t j = j0; j < j1; ++j) dst[j + kj] += src[j];
        }
      }
    }
  }
}

}  // namespace detail

/// 3x3 cross-correlation, stride 1, "same" zero padding: output spatial size
/// equals input spatial size. x:[B,Cin,H,W], weight:[Cout,Cin,3,3], bias:[Cout].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require(x.ndim() == 4, "conv2d: input must be [B,Cin,H,W]");
  detail::require(weight.ndim() == 4 && weight.dim(2) == 3 && weight.dim(3) == 3,
                  "conv2d: weight must be [Cout,Cin,3,3]");
  detail::require(weight.dim(1) == x.dim(1), "conv2d: Cin of input and weight disagree");
  detail::require(bias.ndim() == 1 && bias.dim(0) == weight.dim(0),
                  "conv2d: bias must be [Cout]");
  const std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = weight.dim(0), K = Cin * 9, HW = H * W;

  Tensor<T> y({B, Cout, H, W});
  std::vector<T> col(static_cast<std::size_t>(K * HW));
  for (std::int64_t b = 0; b < B; ++b) {
    detail::im2col3x3(x.data() + b * Cin * HW, Cin, H, W, col.data());
    T* yb = y.data() + b * Cout * HW;
    for (std::int64_t co = 0; co < Cout; ++co)
      std::fill(yb + co * HW, yb + (co + 1) * HW, bias[co]);
    detail::gemm_accum(Cout, HW, K, weight.data(), K, col.data(), HW, yb, HW);
  }
  return y;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> gx, gweight, gbias;
};

/// Gradients of conv2d_forward w.r.t. input, weight and bias.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out) {
  const std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = weight.dim(0), K = Cin * 9, HW = H * W;
  detail::require(grad_out.ndim() == 4 && grad_out.dim(0) == B && grad_out.dim(1) == Cout &&
                      grad_out.dim(2) == H && grad_out.dim(3) == W,
                  "conv2d backward: grad shape mismatch");

  Conv2dGrads<T> g{Tensor<T>({B, Cin, H, W}), Tensor<T>({Cout, Cin, 3, 3}), Tensor<T>({Cout})};

  // weight^T once: [K, Cout]
  std::vector<T> wt(static_cast<std::size_t>(K * Cout));
  for (std::int64_t co = 0; co < Cout; ++co)
    for (std::int64_t k = 0; k < K; ++k) wt[static_cast<std::size_t>(k * Cout + co)] = weight[co * K + k];

  std::vector<T> col(static_cast<std::size_t>(K * HW));
  std::vector<T> dcol(static_cast<std::size_t>(K * HW));
  std::vector<T> dyt(static_cast<std::size_t>(HW * Cout));
  std::vector<T> gwt(static_cast<std::size_t>(K * Cout), T{});
  for (std::int64_t b = 0; b < B; ++b) {
    const T* dyb = grad_out.data() + b * Cout * HW;
    // bias grad
    for (std::int64_t co = 0; co < Cout; ++co) {
      T s{};
      const T* row = dyb + co * HW;
      for (std::int64_t i = 0; i < HW; ++i) s += row[i];
      g.gbias[co] += s;
    }
    // weight grad, accumulated transposed: gwt[K,Cout] += col[K,HW] * dy^T[HW,Cout]
    detail::im2col3x3(x.data() + b * Cin * HW, Cin, H, W, col.data());
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t i = 0; i < HW; ++i) dyt[static_cast<std::size_t>(i * Cout + co)] = dyb[co * HW + i];
    detail::gemm_accum(K, Cout, HW, col.data(), HW, dyt.data(), Cout, gwt.data(), Cout);
    // input grad: dcol[K,HW] = weight^T[K,Cout] * dy[Cout,HW]
    std::fill(dcol.begin(), dcol.end(), T{});
    detail::gemm_accum(K, HW, Cout, wt.data(), Cout, dyb, HW, dcol.data(), HW);
    detail::col2im3x3(dcol.data(), Cin, H, W, g.gx.data() + b * Cin * HW);
  }
  for (std::int64_t co = 0; co < Cout; ++co)
    for (std::int64_t k = 0; k < K; ++k) g.gweight[co * K + k] = gwt[static_cast<std::size_t>(k * Cout + co)];
  return g;
}

enum class BnMode { train, eval };

template <typename T>
struct BnCache {
  Tensor<T> xhat;
  std::vector<T> invstd;  // per channel
  BnMode mode = BnMode::train;
};

/// Batch normalization over [B,C,H,W] with per-channel statistics.
/// Train mode normalizes with batch statistics (biased variance) and updates
/// the running statistics in place via EMA with the given momentum; eval mode
/// normalizes with the running statistics. Freshly initialized running stats
/// (mean 0, var 1) make eval before any training update a valid identity-ish
/// transform. Pass a cache to enable backward.
template <typename T>
Tensor<T> batchnorm2d_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              Tensor<T>& running_mean, Tensor<T>& running_var, BnMode mode,
                              std::type_identity_t<BnCache<T>>* cache = nullptr,
                              double momentum = 0.1, double eps = 1e-5) {
  detail::require(x.ndim() == 4, "batchnorm2d: input must be [B,C,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C &&
                      running_var.numel() == C,
                  "batchnorm2d: per-channel parameter size mismatch");
  const std::int64_t HW = H * W, N = B * HW;

  std::vector<double> mean(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
  if (mode == BnMode::train) {
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) s += static_cast<double>(p[i]);
      }
      const double m = s / static_cast<double>(N);
      double v = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          const double d = static_cast<double>(p[i]) - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(N);
      mean[static_cast<std::size_t>(c)] = m;
      invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(v + eps);
      running_mean[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[c]) + momentum * m);
      running_var[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[c]) + momentum * v);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = static_cast<double>(running_mean[c]);
      invstd[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
    }
  }

  Tensor<T> y({B, C, H, W});
  if (cache) {
    cache->xhat = Tensor<T>({B, C, H, W});
    cache->invstd.assign(static_cast<std::size_t>(C), T{});
    cache->mode = mode;
  }
  for (std::int64_t c = 0; c < C; ++c) {
    const T m = static_cast<T>(mean[static_cast<std::size_t>(c)]);
    const T is = static_cast<T>(invstd[static_cast<std::size_t>(c)]);
    const T g = gamma[c], bt = beta[c];
    if (cache) cache->invstd[static_cast<std::size_t>(c)] = is;
    for (std::int64_t b = 0; b < B; ++b) {
      const T* px = x.data() + (b * C + c) * HW;
      T* py = y.data() + (b * C + c) * HW;
      T* ph = cache ? cache->xhat.data() + (b * C + c) * HW : nullptr;
      for (std::int64_t i = 0; i < HW; ++i) {
        const T xh = (px[i] - m) * is;
        if (ph) ph[i] = xh;
        py[i] = g * xh + bt;
      }
    }
  }
  return y;
}

template <typename T>
struct BnGrads {
  Tensor<T> gx, ggamma, gbeta;
};

template <typename T>
BnGrads<T> batchnorm2d_backward(const BnCache<T>& cache, const Tensor<T>& gamma,
                                const Tensor<T>& grad_out) {
  const Tensor<T>& xhat = cache.xhat;
  detail::require(grad_out.same_shape(xhat), "batchnorm2d backward: grad shape mismatch");
  const std::int64_t B = xhat.dim(0), C = xhat.dim(1), HW = xhat.dim(2) * xhat.dim(3);
  const std::int64_t N = B * HW;

  BnGrads<T> g{Tensor<T>(xhat.shape()), Tensor<T>({C}), Tensor<T>({C})};
  for (std::int64_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const T* pdy = grad_out.data() + (b * C + c) * HW;
      const T* ph = xhat.data() + (b * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        sum_dy += static_cast<double>(pdy[i]);
        sum_dy_xhat += static_cast<double>(pdy[i]) * static_cast<double>(ph[i]);
      }
    }
    g.gbeta[c] = static_cast<T>(sum_dy);
    g.ggamma[c] = static_cast<T>(sum_dy_xhat);
    const T is = cache.invstd[static_cast<std::size_t>(c)];
    const T gm = gamma[c];
    if (cache.mode == BnMode::train) {
      const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(N));
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(N));
      for (std::int64_t b = 0; b < B; ++b) {
        const T* pdy = grad_out.data() + (b * C + c) * HW;
        const T* ph = xhat.data() + (b * C + c) * HW;
        T* pgx = g.gx.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i)
          pgx[i] = gm * is * (pdy[i] - mean_dy - ph[i] * mean_dy_xhat);
      }
    } else {
      for (std::int64_t b = 0; b < B; ++b) {
        const T* pdy = grad_out.data() + (b * C + c) * HW;
        T* pgx = g.gx.data() + (b * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) pgx[i] = gm * is * pdy[i];
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{} ? x[i] : T{};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  detail::require(y.same_shape(grad_out), "relu backward: shape mismatch");
  Tensor<T> gx(y.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) gx[i] = y[i] > T{} ? grad_out[i] : T{};
  return gx;
}

template <typename T>
Tensor<T> tanh_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  detail::require(y.same_shape(grad_out), "tanh backward: shape mismatch");
  Tensor<T> gx(y.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) gx[i] = grad_out[i] * (T{1} - y[i] * y[i]);
  return gx;
}

template <typename T>
struct MaxPool2Result {
  Tensor<T> y;
  Tensor<std::int64_t> argmax;  // flat index into the input tensor
};

/// 2x2 max pooling, stride 2. Requires even spatial dimensions. Records the
/// argmax (first maximum in scan order on ties) for the exact backward scatter.
template <typename T>
MaxPool2Result<T> maxpool2_forward(const Tensor<T>& x) {
  detail::require(x.ndim() == 4, "maxpool2: input must be [B,C,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(H % 2 == 0 && W % 2 == 0, "maxpool2: spatial dimensions must be even");
  const std::int64_t Ho = H / 2, Wo = W / 2;

  MaxPool2Result<T> r{Tensor<T>({B, C, Ho, Wo}), Tensor<std::int64_t>({B, C, Ho, Wo})};
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* px = x.data() + bc * H * W;
    T* py = r.y.data() + bc * Ho * Wo;
    std::int64_t* pa = r.argmax.data() + bc * Ho * Wo;
    const std::int64_t base = bc * H * W;
    for (std::int64_t i = 0; i < Ho; ++i) {
      for (std::int64_t j = 0; j < Wo; ++j) {
        const std::int64_t i0 = 2 * i, j0 = 2 * j;
        std::int64_t best = i0 * W + j0;
        T bv = px[best];
        const std::int64_t cands[3] = {i0 * W + j0 + 1, (i0 + 1) * W + j0, (i0 + 1) * W + j0 + 1};
        for (std::int64_t cand : cands) {
          if (px[cand] > bv) {
            bv = px[cand];
            best = cand;
          }
        }
        py[i * Wo + j] = bv;
        pa[i * Wo + j] = base + best;
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<std::int64_t>& argmax,
                            const std::vector<std::int64_t>& input_shape,
                            const Tensor<T>& grad_out) {
  detail::require(argmax.shape() == grad_out.shape(), "maxpool2 backward: shape mismatch");
  Tensor<T> gx(input_shape);
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) gx[argmax[i]] += grad_out[i];
  return gx;
}

namespace detail {
struct LerpIndex {
  std::int64_t lo, hi;
  double w;  // weight of hi
};

inline std::vector<LerpIndex> bilinear2x_axis(std::int64_t n_in) {
  std::vector<LerpIndex> m(static_cast<std::size_t>(2 * n_in));
  for (std::int64_t i = 0; i < 2 * n_in; ++i) {
    // half-pixel centers: output i samples input (i + 0.5)/2 - 0.5, clamped
    double src = 0.5 * static_cast<double>(i) - 0.25;
    src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    m[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, n_in - 1), src - static_cast<double>(lo)};
  }
  return m;
}
}  // namespace detail

/// Bilinear 2x upsampling with half-pixel-center sampling (edge clamped).
template <typename T>
Tensor<T> upsample_bilinear2x_forward(const Tensor<T>& x) {
  detail::require(x.ndim() == 4, "upsample: input must be [B,C,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto mi = detail::bilinear2x_axis(H);
  const auto mj = detail::bilinear2x_axis(W);

  Tensor<T> y({B, C, 2 * H, 2 * W});
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* px = x.data() + bc * H * W;
    T* py = y.data() + bc * 4 * H * W;
    for (std::int64_t i = 0; i < 2 * H; ++i) {
      const auto& ri = mi[static_cast<std::size_t>(i)];
      const T wi = static_cast<T>(ri.w);
      for (std::int64_t j = 0; j < 2 * W; ++j) {
        const auto& rj = mj[static_cast<std::size_t>(j)];
        const T wj = static_cast<T>(rj.w);
        const T v00 = px[ri.lo * W + rj.lo], v01 = px[ri.lo * W + rj.hi];
        const T v10 = px[ri.hi * W + rj.lo], v11 = px[ri.hi * W + rj.hi];
        const T top = v00 + wj * (v01 - v00);
        const T bot = v10 + wj * (v11 - v10);
        py[i * 2 * W + j] = top + wi * (bot - top);
      }
    }
  }
  return y;
}

/// Exact transpose of the interpolation: scatter each output gradient to its
/// up-to-four source corners with the forward weights.
template <typename T>
Tensor<T> upsample_bilinear2x_backward(const Tensor<T>& grad_out, std::int64_t in_h,
                                       std::int64_t in_w) {
  detail::require(grad_out.ndim() == 4 && grad_out.dim(2) == 2 * in_h && grad_out.dim(3) == 2 * in_w,
                  "upsample backward: grad shape mismatch");
  const std::int64_t B = grad_out.dim(0), C = grad_out.dim(1);
  const auto mi = detail::bilinear2x_axis(in_h);
  const auto mj = detail::bilinear2x_axis(in_w);

  Tensor<T> gx({B, C, in_h, in_w});
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* pdy = grad_out.data() + bc * 4 * in_h * in_w;
    T* pgx = gx.data() + bc * in_h * in_w;
    for (std::int64_t i = 0; i < 2 * in_h; ++i) {
      const auto& ri = mi[static_cast<std::size_t>(i)];
      const T wi = static_cast<T>(ri.w);
      for (std::int64_t j = 0; j < 2 * in_w; ++j) {
        const auto& rj = mj[static_cast<std::size_t>(j)];
        const T wj = static_cast<T>(rj.w);
        const T dy = pdy[i * 2 * in_w + j];
        pgx[ri.lo * in_w + rj.lo] += (T{1} - wi) * (T{1} - wj) * dy;
        pgx[ri.lo * in_w + rj.hi] += (T{1} - wi) * wj * dy;
        pgx[ri.hi * in_w + rj.lo] += wi * (T{1} - wj) * dy;
        pgx[ri.hi * in_w + rj.hi] += wi * wj * dy;
      }
    }
  }
  return gx;
}

/// Numerically stabilized softmax across the class axis (dim 1), per pixel.
template <typename T>
Tensor<T> softmax_over_classes(const Tensor<T>& x) {
  detail::require(x.ndim() == 4, "softmax: input must be [B,C,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> s(x.shape());
  for (std::int64_t b = 0; b < B; ++b) {
    const T* px = x.data() + b * C * HW;
    T* ps = s.data() + b * C * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      T m = px[i];
      for (std::int64_t c = 1; c < C; ++c) m = std::max(m, px[c * HW + i]);
      T z{};
      for (std::int64_t c = 0; c < C; ++c) {
        const T e = std::exp(px[c * HW + i] - m);
        ps[c * HW + i] = e;
        z += e;
      }
      const T inv = T{1} / z;
      for (std::int64_t c = 0; c < C; ++c) ps[c * HW + i] *= inv;
    }
  }
  return s;
}

template <typename T>
Tensor<T> softmax_over_classes_backward(const Tensor<T>& softmax_out, const Tensor<T>& grad_out) {
  detail::require(softmax_out.same_shape(grad_out), "softmax backward: shape mismatch");
  const std::int64_t B = softmax_out.dim(0), C = softmax_out.dim(1),
                     HW = softmax_out.dim(2) * softmax_out.dim(3);
  Tensor<T> gx(softmax_out.shape());
  for (std::int64_t b = 0; b < B; ++b) {
    const T* ps = softmax_out.data() + b * C * HW;
    const T* pdy = grad_out.data() + b * C * HW;
    T* pgx = gx.data() + b * C * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      T dot{};
      for (std::int64_t c = 0; c < C; ++c) dot += pdy[c * HW + i] * ps[c * HW + i];
      for (std::int64_t c = 0; c < C; ++c)
        pgx[c * HW + i] = ps[c * HW + i] * (pdy[c * HW + i] - dot);
    }
  }
  return gx;
}

/// Elementwise sum (the decoder skip junction). Backward routes the gradient
/// unchanged to both inputs, so no explicit backward is provided.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.same_shape(b), "add: shape mismatch");
  Tensor<T> y(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

}  // namespace ldseg::nn
