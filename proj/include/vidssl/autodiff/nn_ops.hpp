// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vidssl/autodiff/ops.hpp"

namespace vidssl {

using Triple = std::array<std::size_t, 3>;

enum class Mode { kTrain, kEval };

namespace detail {

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride,
                               std::size_t pad, const char* what) {
  if (stride == 0) throw ShapeError(std::string(what) + ": zero stride");
  if (in + 2 * pad < k)
    throw ShapeError(std::string(what) + ": kernel " + std::to_string(k) +
                     " does not fit padded extent " + std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

struct ConvGeometry {
  std::size_t channels, t, h, w;
  Triple kernel, stride, pad;
  std::size_t to, ho, wo;

  std::size_t patch() const { return channels * kernel[0] * kernel[1] * kernel[2]; }
  std::size_t positions() const { return to * ho * wo; }
  bool pointwise() const {
    return kernel == Triple{1, 1, 1} && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
  }
};

// col: [patch, positions] for one sample.
template <class T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const auto [kt, kh, kw] = g.kernel;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t dt = 0; dt < kt; ++dt)
      for (std::size_t dh = 0; dh < kh; ++dh)
        for (std::size_t dw = 0; dw < kw; ++dw, ++row) {
          T* dst = col + row * g.positions();
          for (std::size_t ot = 0; ot < g.to; ++ot) {
            const auto ti = static_cast<std::ptrdiff_t>(ot * g.stride[0] + dt) -
                            static_cast<std::ptrdiff_t>(g.pad[0]);
            for (std::size_t oh = 0; oh < g.ho; ++oh) {
              const auto hi = static_cast<std::ptrdiff_t>(oh * g.stride[1] + dh) -
                              static_cast<std::ptrdiff_t>(g.pad[1]);
              T* drow = dst + (ot * g.ho + oh) * g.wo;
              const bool inside = ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.t) &&
                                  hi >= 0 && hi < static_cast<std::ptrdiff_t>(g.h);
              if (!inside) {
                std::fill_n(drow, g.wo, T(0));
                continue;
              }
              const T* src = in + ((c * g.t + ti) * g.h + hi) * g.w;
              for (std::size_t ow = 0; ow < g.wo; ++ow) {
                const auto wi = static_cast<std::ptrdiff_t>(ow * g.stride[2] + dw) -
                                static_cast<std::ptrdiff_t>(g.pad[2]);
                drow[ow] = (wi >= 0 && wi < static_cast<std::ptrdiff_t>(g.w)) ? src[wi] : T(0);
              }
            }
          }
        }
}

template <class T>
void col2im(const T* col, const ConvGeometry& g, T* in) {
  const auto [kt, kh, kw] = g.kernel;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t dt = 0; dt < kt; ++dt)
      for (std::size_t dh = 0; dh < kh; ++dh)
        for (std::size_t dw = 0; dw < kw; ++dw, ++row) {
          const T* src = col + row * g.positions();
          for (std::size_t ot = 0; ot < g.to; ++ot) {
            const auto ti = static_cast<std::ptrdiff_t>(ot * g.stride[0] + dt) -
                            static_cast<std::ptrdiff_t>(g.pad[0]);
            if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.t)) continue;
            for (std::size_t oh = 0; oh < g.ho; ++oh) {
              const auto hi = static_cast<std::ptrdiff_t>(oh * g.stride[1] + dh) -
                              static_cast<std::ptrdiff_t>(g.pad[1]);
              if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(g.h)) continue;
              const T* srow = src + (ot * g.ho + oh) * g.wo;
              T* dst = in + ((c * g.t + ti) * g.h + hi) * g.w;
              for (std::size_t ow = 0; ow < g.wo; ++ow) {
                const auto wi = static_cast<std::ptrdiff_t>(ow * g.stride[2] + dw) -
                                static_cast<std::ptrdiff_t>(g.pad[2]);
                if (wi >= 0 && wi < static_cast<std::ptrdiff_t>(g.w)) dst[wi] += srow[ow];
              }
            }
          }
        }
}

}  // namespace detail

/// 3-D convolution, no bias. input [B,C,T,H,W], weight [O,C,kt,kh,kw].
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, Triple stride,
                 Triple padding) {
  if (input.rank() != 5 || weight.rank() != 5)
    throw ShapeError("conv3d: expected 5-D input and weight, got " +
                     to_string(input.shape()) + " and " + to_string(weight.shape()));
  if (weight.dim(1) != input.dim(1))
    throw ShapeError("conv3d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, got " + std::to_string(input.dim(1)));
  detail::ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), input.dim(4),
                         {weight.dim(2), weight.dim(3), weight.dim(4)}, stride, padding,
                         0, 0, 0};
  g.to = detail::conv_extent(g.t, g.kernel[0], stride[0], padding[0], "conv3d");
  g.ho = detail::conv_extent(g.h, g.kernel[1], stride[1], padding[1], "conv3d");
  g.wo = detail::conv_extent(g.w, g.kernel[2], stride[2], padding[2], "conv3d");
  const auto batch = input.dim(0), outc = weight.dim(0);
  const auto K = g.patch(), P = g.positions();
  const std::size_t in_stride = g.channels * g.t * g.h * g.w;
  if (P == 0) throw ShapeError("conv3d: zero-extent output");

  using detail::CMapMat;
  using detail::MapMat;
  std::vector<T> out(batch * outc * P);
  std::vector<T> col(g.pointwise() ? 0 : K * P);
  CMapMat<T> w(weight.values().data(), outc, K);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* x = input.values().data() + b * in_stride;
    const T* c = x;
    if (!g.pointwise()) {
      detail::im2col(x, g, col.data());
      c = col.data();
    }
    MapMat<T>(out.data() + b * outc * P, outc, P).noalias() = w * CMapMat<T>(c, K, P);
  }
  return detail::make_result<T>(
      {batch, outc, g.to, g.ho, g.wo}, std::move(out), {input, weight},
      [g, batch, outc, K, P, in_stride](Node<T>& self) {
        auto* gx = detail::grad_sink(self, 0);
        auto* gw = detail::grad_sink(self, 1);
        const auto& x = self.parents[0]->value;
        CMapMat<T> w(self.parents[1]->value.data(), outc, K);
        std::vector<T> col(g.pointwise() ? 0 : K * P);
        std::vector<T> dcol(g.pointwise() ? 0 : K * P);
        for (std::size_t b = 0; b < batch; ++b) {
          CMapMat<T> go(self.grad.data() + b * outc * P, outc, P);
          if (gw) {
            const T* c = x.data() + b * in_stride;
            if (!g.pointwise()) {
              detail::im2col(c, g, col.data());
              c = col.data();
            }
            MapMat<T>(gw->data(), outc, K).noalias() += go * CMapMat<T>(c, K, P).transpose();
          }
          if (gx) {
            if (g.pointwise()) {
              MapMat<T>(gx->data() + b * in_stride, K, P).noalias() += w.transpose() * go;
            } else {
              MapMat<T>(dcol.data(), K, P).noalias() = w.transpose() * go;
              detail::col2im(dcol.data(), g, gx->data() + b * in_stride);
            }
          }
        }
      },
      "conv3d");
}

/// Max pooling over (T,H,W); padded cells never win.
template <class T>
Tensor<T> max_pool3d(const Tensor<T>& input, Triple kernel, Triple stride, Triple padding) {
  if (input.rank() != 5) throw ShapeError("max_pool3d: expected 5-D input");
  const auto b = input.dim(0), c = input.dim(1), t = input.dim(2), h = input.dim(3),
             w = input.dim(4);
  const auto to = detail::conv_extent(t, kernel[0], stride[0], padding[0], "max_pool3d");
  const auto ho = detail::conv_extent(h, kernel[1], stride[1], padding[1], "max_pool3d");
  const auto wo = detail::conv_extent(w, kernel[2], stride[2], padding[2], "max_pool3d");
  std::vector<T> out(b * c * to * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const auto x = input.values();
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < b * c; ++bc)
    for (std::size_t ot = 0; ot < to; ++ot)
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t arg = 0;
          for (std::size_t dt = 0; dt < kernel[0]; ++dt)
            for (std::size_t dh = 0; dh < kernel[1]; ++dh)
              for (std::size_t dw = 0; dw < kernel[2]; ++dw) {
                const auto ti = static_cast<std::ptrdiff_t>(ot * stride[0] + dt) - static_cast<std::ptrdiff_t>(padding[0]);
                const auto hi = static_cast<std::ptrdiff_t>(oh * stride[1] + dh) - static_cast<std::ptrdiff_t>(padding[1]);
                const auto wi = static_cast<std::ptrdiff_t>(ow * stride[2] + dw) - static_cast<std::ptrdiff_t>(padding[2]);
                if (ti < 0 || hi < 0 || wi < 0 || ti >= static_cast<std::ptrdiff_t>(t) ||
                    hi >= static_cast<std::ptrdiff_t>(h) || wi >= static_cast<std::ptrdiff_t>(w))
                  continue;
                const auto idx = ((bc * t + ti) * h + hi) * w + wi;
                if (x[idx] > best) {
                  best = x[idx];
                  arg = idx;
                }
              }
          out[o] = best;
          argmax[o] = arg;
          trace_branch(arg);
        }
  return detail::make_result<T>({b, c, to, ho, wo}, std::move(out), {input},
      [argmax = std::move(argmax)](Node<T>& self) {
        if (auto* gx = detail::grad_sink(self, 0))
          for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += self.grad[i];
      },
      "max_pool3d");
}

/// Running statistics of one batch-norm layer.
template <class T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;

  static RunningStats identity(std::size_t channels) {
    return {std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1))};
  }
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
  // Train mode: statistics computed independently over this many contiguous
  // slices of the batch axis.
  std::size_t groups = 1;
};

/// Batch normalization over every axis except 1 (channels).
template <class T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                    RunningStats<T>& stats, Mode mode, BatchNormOptions opt = {}) {
  if (input.rank() < 2) throw ShapeError("batchnorm: expected rank >= 2");
  const auto n = input.dim(0), c = input.dim(1);
  if (scale.numel() != c || shift.numel() != c)
    throw ShapeError("batchnorm: scale/shift extent " + std::to_string(scale.numel()) +
                     " does not match channels " + std::to_string(c));
  if (stats.mean.size() != c) stats = RunningStats<T>::identity(c);
  const std::size_t inner = input.numel() / (n * c);
  const std::size_t groups = mode == Mode::kTrain ? opt.groups : 1;
  if (groups == 0 || n % groups != 0)
    throw ShapeError("batchnorm: batch " + std::to_string(n) + " not divisible into " +
                     std::to_string(groups) + " groups");
  const std::size_t per = n / groups;
  const std::size_t count = per * inner;
  if (mode == Mode::kTrain && count <= 1)
    throw NumericError("batchnorm: single element per channel in train mode");

  const auto x = input.values();
  const auto gam = scale.values();
  const auto bet = shift.values();
  std::vector<T> out(input.numel());
  std::vector<T> xhat(mode == Mode::kTrain ? input.numel() : 0);
  std::vector<T> inv_std(groups * c);
  const auto at = [&](std::size_t b, std::size_t ch, std::size_t i) {
    return (b * c + ch) * inner + i;
  };

  if (mode == Mode::kEval) {
    for (std::size_t ch = 0; ch < c; ++ch)
      inv_std[ch] = T(1) / std::sqrt(stats.var[ch] + static_cast<T>(opt.eps));
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i) {
          const auto k = at(b, ch, i);
          out[k] = (x[k] - stats.mean[ch]) * inv_std[ch] * gam[ch] + bet[ch];
        }
  } else {
    std::vector<T> new_mean(c, T(0)), new_var(c, T(0));
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t ch = 0; ch < c; ++ch) {
        T mu = 0;
        for (std::size_t b = gi * per; b < (gi + 1) * per; ++b)
          for (std::size_t i = 0; i < inner; ++i) mu += x[at(b, ch, i)];
        mu /= static_cast<T>(count);
        T var = 0;
        for (std::size_t b = gi * per; b < (gi + 1) * per; ++b)
          for (std::size_t i = 0; i < inner; ++i) {
            const T d = x[at(b, ch, i)] - mu;
            var += d * d;
          }
        var /= static_cast<T>(count);
        const T is = T(1) / std::sqrt(var + static_cast<T>(opt.eps));
        inv_std[gi * c + ch] = is;
        for (std::size_t b = gi * per; b < (gi + 1) * per; ++b)
          for (std::size_t i = 0; i < inner; ++i) {
            const auto k = at(b, ch, i);
            xhat[k] = (x[k] - mu) * is;
            out[k] = xhat[k] * gam[ch] + bet[ch];
          }
        new_mean[ch] += mu / static_cast<T>(groups);
        new_var[ch] += var * static_cast<T>(count) / static_cast<T>(count - 1) /
                       static_cast<T>(groups);
      }
    const T m = static_cast<T>(opt.momentum);
    for (std::size_t ch = 0; ch < c; ++ch) {
      stats.mean[ch] = (T(1) - m) * stats.mean[ch] + m * new_mean[ch];
      stats.var[ch] = (T(1) - m) * stats.var[ch] + m * new_var[ch];
    }
  }

  return detail::make_result<T>(
      input.shape(), std::move(out), {input, scale, shift},
      [mode, n, c, inner, groups, per, count, xhat = std::move(xhat),
       inv_std = std::move(inv_std), eval_mean = stats.mean](Node<T>& self) {
        const auto& g = self.grad;
        const auto& x = self.parents[0]->value;
        const auto& gam = self.parents[1]->value;
        auto* gx = detail::grad_sink(self, 0);
        auto* gs = detail::grad_sink(self, 1);
        auto* gb = detail::grad_sink(self, 2);
        const auto at = [&](std::size_t b, std::size_t ch, std::size_t i) {
          return (b * c + ch) * inner + i;
        };
        for (std::size_t gi = 0; gi < groups; ++gi)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T is = inv_std[mode == Mode::kTrain ? gi * c + ch : ch];
            T sum_g = 0, sum_gx = 0;
            for (std::size_t b = gi * per; b < (gi + 1) * per; ++b)
              for (std::size_t i = 0; i < inner; ++i) {
                const auto k = at(b, ch, i);
                const T xh = mode == Mode::kTrain ? xhat[k] : (x[k] - eval_mean[ch]) * is;
                sum_g += g[k];
                sum_gx += g[k] * xh;
              }
            if (gs) (*gs)[ch] += sum_gx;
            if (gb) (*gb)[ch] += sum_g;
            if (!gx) continue;
            const T cnt = static_cast<T>(count);
            for (std::size_t b = gi * per; b < (gi + 1) * per; ++b)
              for (std::size_t i = 0; i < inner; ++i) {
                const auto k = at(b, ch, i);
                if (mode == Mode::kTrain)
                  (*gx)[k] += gam[ch] * is * (g[k] - sum_g / cnt - xhat[k] * sum_gx / cnt);
                else
                  (*gx)[k] += gam[ch] * is * g[k];
              }
          }
        (void)n;
      },
      "batchnorm");
}

}  // namespace vidssl
