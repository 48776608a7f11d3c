// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vidssl/autodiff/tensor.hpp"

namespace vidssl {

enum class Elementwise { kAdd, kSub, kMul, kScale, kRelu, kExp, kLog, kNeg };

/// Strict mode turns silent non-finite results into errors.
enum class Strictness { kLenient, kStrict };

/// When set, relu and max_pool3d fold their branch choices (sign of each
/// input, argmax of each window) into this hash. Gradient checks compare it
/// across finite-difference evaluations to spot steps that cross a kink.
inline thread_local std::uint64_t* branch_trace = nullptr;

inline void trace_branch(std::uint64_t choice) {
  if (branch_trace) *branch_trace = (*branch_trace ^ choice) * 0x100000001b3ull;
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Broadcast is restricted to leading 1s: `small` left-padded with ones must be
// [1,...,1, suffix-of-big]. Returns the period of the small operand.
inline std::optional<std::size_t> broadcast_period(const Shape& big,
                                                   const Shape& small) {
  if (small.size() > big.size()) return std::nullopt;
  Shape padded(big.size() - small.size(), 1);
  padded.insert(padded.end(), small.begin(), small.end());
  std::size_t i = 0;
  while (i < padded.size() && padded[i] == 1 && big[i] != 1) ++i;
  for (std::size_t j = i; j < padded.size(); ++j)
    if (padded[j] != big[j]) return std::nullopt;
  return numel(small);
}

}  // namespace detail

/// Binary or unary elementwise op. `b` is required for add/sub/mul only;
/// `factor` is used by kScale.
template <class T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>* b, Elementwise kind,
                      T factor = T(1), Strictness strict = Strictness::kLenient) {
  using detail::make_result;
  const bool binary =
      kind == Elementwise::kAdd || kind == Elementwise::kSub || kind == Elementwise::kMul;
  if (binary) {
    if (!b || !b->defined()) throw ShapeError("elementwise: missing second operand");
    const bool a_big = a.numel() >= b->numel();
    const Tensor<T>& big = a_big ? a : *b;
    const Tensor<T>& small = a_big ? *b : a;
    auto period = detail::broadcast_period(big.shape(), small.shape());
    if (!period)
      throw ShapeError("elementwise: incompatible shapes " + to_string(a.shape()) +
                       " and " + to_string(b->shape()));
    const std::size_t n = big.numel(), m = *period;
    const auto av = a.values();
    const auto bv = b->values();
    const std::size_t na = a.numel(), nb = b->numel();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T x = av[i % na], y = bv[i % nb];
      out[i] = kind == Elementwise::kAdd ? x + y : kind == Elementwise::kSub ? x - y : x * y;
    }
    (void)m;
    return make_result<T>(
        big.shape(), std::move(out), {a, *b},
        [kind, na, nb, n](Node<T>& self) {
          const auto& g = self.grad;
          const auto& x = self.parents[0]->value;
          const auto& y = self.parents[1]->value;
          if (auto* ga = detail::grad_sink(self, 0)) {
            for (std::size_t i = 0; i < n; ++i) {
              const T d = kind == Elementwise::kMul ? g[i] * y[i % nb] : g[i];
              (*ga)[i % na] += d;
            }
          }
          if (auto* gb = detail::grad_sink(self, 1)) {
            for (std::size_t i = 0; i < n; ++i) {
              const T d = kind == Elementwise::kMul   ? g[i] * x[i % na]
                          : kind == Elementwise::kSub ? -g[i]
                                                      : g[i];
              (*gb)[i % nb] += d;
            }
          }
        },
        kind == Elementwise::kAdd ? "add" : kind == Elementwise::kSub ? "sub" : "mul");
  }

  const auto av = a.values();
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[i];
    switch (kind) {
      case Elementwise::kScale: out[i] = x * factor; break;
      case Elementwise::kRelu:
        out[i] = x > T(0) ? x : T(0);
        trace_branch(x > T(0));
        break;
      case Elementwise::kExp: out[i] = std::exp(x); break;
      case Elementwise::kNeg: out[i] = -x; break;
      case Elementwise::kLog:
        if (x <= T(0) && strict == Strictness::kStrict)
          throw NumericError("log: non-positive input " + std::to_string(x) +
                             " at index " + std::to_string(i));
        out[i] = x < T(0) ? std::numeric_limits<T>::quiet_NaN()
                 : x == T(0) ? -std::numeric_limits<T>::infinity()
                             : std::log(x);
        break;
      default: break;
    }
  }
  return make_result<T>(
      a.shape(), std::move(out), {a},
      [kind, factor, n](Node<T>& self) {
        auto* ga = detail::grad_sink(self, 0);
        if (!ga) return;
        const auto& g = self.grad;
        const auto& x = self.parents[0]->value;
        const auto& y = self.value;
        for (std::size_t i = 0; i < n; ++i) {
          switch (kind) {
            case Elementwise::kScale: (*ga)[i] += g[i] * factor; break;
            case Elementwise::kRelu: (*ga)[i] += x[i] > T(0) ? g[i] : T(0); break;
            case Elementwise::kExp: (*ga)[i] += g[i] * y[i]; break;
            case Elementwise::kNeg: (*ga)[i] -= g[i]; break;
            case Elementwise::kLog: (*ga)[i] += g[i] / x[i]; break;
            default: break;
          }
        }
      },
      "unary");
}

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, &b, Elementwise::kAdd); }
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, &b, Elementwise::kSub); }
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, &b, Elementwise::kMul); }
template <class T> Tensor<T> scale(const Tensor<T>& a, T f) { return elementwise<T>(a, nullptr, Elementwise::kScale, f); }
template <class T> Tensor<T> relu(const Tensor<T>& a) { return elementwise<T>(a, nullptr, Elementwise::kRelu); }
template <class T> Tensor<T> exp(const Tensor<T>& a) { return elementwise<T>(a, nullptr, Elementwise::kExp); }
template <class T> Tensor<T> neg(const Tensor<T>& a) { return elementwise<T>(a, nullptr, Elementwise::kNeg); }
template <class T>
Tensor<T> log(const Tensor<T>& a, Strictness strict = Strictness::kLenient) {
  return elementwise<T>(a, nullptr, Elementwise::kLog, T(1), strict);
}

/// Sum of all entries, shape [1].
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  const std::size_t n = a.numel();
  return detail::make_result<T>({1}, {s}, {a},
      [n](Node<T>& self) {
        if (auto* ga = detail::grad_sink(self, 0))
          for (std::size_t i = 0; i < n; ++i) (*ga)[i] += self.grad[0];
      },
      "sum");
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  std::vector<T> v(a.values().begin(), a.values().end());
  const std::size_t n = a.numel();
  return detail::make_result<T>(std::move(shape), std::move(v), {a},
      [n](Node<T>& self) {
        if (auto* ga = detail::grad_sink(self, 0))
          for (std::size_t i = 0; i < n; ++i) (*ga)[i] += self.grad[i];
      },
      "reshape");
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) +
                     " x " + to_string(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  using detail::CMapMat;
  using detail::MapMat;
  MapMat<T>(out.data(), m, n).noalias() =
      CMapMat<T>(a.values().data(), m, k) * CMapMat<T>(b.values().data(), k, n);
  return detail::make_result<T>({m, n}, std::move(out), {a, b},
      [m, k, n](Node<T>& self) {
        CMapMat<T> g(self.grad.data(), m, n);
        if (auto* ga = detail::grad_sink(self, 0))
          MapMat<T>(ga->data(), m, k).noalias() +=
              g * CMapMat<T>(self.parents[1]->value.data(), k, n).transpose();
        if (auto* gb = detail::grad_sink(self, 1))
          MapMat<T>(gb->data(), k, n).noalias() +=
              CMapMat<T>(self.parents[0]->value.data(), m, k).transpose() * g;
      },
      "matmul");
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + to_string(a.shape()));
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return detail::make_result<T>({c, r}, std::move(out), {a},
      [r, c](Node<T>& self) {
        if (auto* ga = detail::grad_sink(self, 0))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += self.grad[j * r + i];
      },
      "transpose");
}

/// Stacks 2-D tensors with equal column counts.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto cols = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols)
      throw ShapeError("concat_rows: column mismatch " + to_string(p.shape()));
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * cols);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return detail::make_result<T>({rows, cols}, std::move(out), parts,
      [offsets](Node<T>& self) {
        for (std::size_t i = 0; i < offsets.size(); ++i)
          if (auto* gp = detail::grad_sink(self, i))
            for (std::size_t j = 0; j < gp->size(); ++j) (*gp)[j] += self.grad[offsets[i] + j];
      },
      "concat_rows");
}

/// Selects rows by index (repeats allowed) from a tensor of rank >= 1.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& rows) {
  if (a.rank() < 1) throw ShapeError("gather_rows: rank 0");
  const std::size_t stride = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = rows.size();
  std::vector<T> out(rows.size() * stride);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(a.values().begin() + rows[i] * stride, stride, out.begin() + i * stride);
  }
  return detail::make_result<T>(std::move(shape), std::move(out), {a},
      [rows, stride](Node<T>& self) {
        if (auto* ga = detail::grad_sink(self, 0))
          for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < stride; ++j)
              (*ga)[rows[i] * stride + j] += self.grad[i * stride + j];
      },
      "gather_rows");
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.dim(0)) throw ShapeError("slice_rows: bad range");
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(a, idx);
}

/// Row-wise log-sum-exp over entries where mask != 0. x: [N, M] -> [N].
template <class T>
Tensor<T> masked_row_logsumexp(const Tensor<T>& x, const std::vector<std::uint8_t>& mask) {
  if (x.rank() != 2 || mask.size() != x.numel())
    throw ShapeError("masked_row_logsumexp: mask/shape mismatch " + to_string(x.shape()));
  const auto rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(rows);
  std::vector<T> soft(x.numel(), T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (mask[i * cols + j]) mx = std::max(mx, x[i * cols + j]);
    if (mx == -std::numeric_limits<T>::infinity())
      throw ShapeError("masked_row_logsumexp: row " + std::to_string(i) + " has no entries");
    T s = 0;
    for (std::size_t j = 0; j < cols; ++j)
      if (mask[i * cols + j]) {
        soft[i * cols + j] = std::exp(x[i * cols + j] - mx);
        s += soft[i * cols + j];
      }
    out[i] = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) soft[i * cols + j] /= s;
  }
  return detail::make_result<T>({rows}, std::move(out), {x},
      [soft = std::move(soft), cols](Node<T>& self) {
        if (auto* gx = detail::grad_sink(self, 0))
          for (std::size_t j = 0; j < soft.size(); ++j) (*gx)[j] += self.grad[j / cols] * soft[j];
      },
      "masked_row_logsumexp");
}

/// Row-wise log-softmax of a 2-D tensor.
template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("log_softmax_rows: expected 2-D");
  const auto rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < rows; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[i * cols + j]);
    T s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(x[i * cols + j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = x[i * cols + j] - lse;
  }
  return detail::make_result<T>({rows, cols}, std::move(out), {x},
      [rows, cols](Node<T>& self) {
        auto* gx = detail::grad_sink(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < rows; ++i) {
          T gs = 0;
          for (std::size_t j = 0; j < cols; ++j) gs += self.grad[i * cols + j];
          for (std::size_t j = 0; j < cols; ++j)
            (*gx)[i * cols + j] += self.grad[i * cols + j] - std::exp(self.value[i * cols + j]) * gs;
        }
      },
      "log_softmax_rows");
}

/// Unit Euclidean norm along `axis`. Lenient mode adds `eps` inside the sqrt;
/// strict mode rejects all-zero slices instead.
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis,
                       Strictness strict = Strictness::kLenient, T eps = T(1e-12)) {
  if (axis >= x.rank()) throw ShapeError("l2_normalize: axis out of range");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const T guard = strict == Strictness::kStrict ? T(0) : eps;
  std::vector<T> norms(outer * inner);
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      T ss = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T v = x[(o * len + k) * inner + in];
        ss += v * v;
      }
      if (strict == Strictness::kStrict && ss == T(0))
        throw NumericError("l2_normalize: zero-norm slice in strict mode");
      const T nrm = std::sqrt(ss + guard);
      norms[o * inner + in] = nrm;
      for (std::size_t k = 0; k < len; ++k) {
        const auto idx = (o * len + k) * inner + in;
        out[idx] = x[idx] / nrm;
      }
    }
  return detail::make_result<T>(s, std::move(out), {x},
      [norms = std::move(norms), outer, inner, len](Node<T>& self) {
        auto* gx = detail::grad_sink(self, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t in = 0; in < inner; ++in) {
            T dot = 0;
            for (std::size_t k = 0; k < len; ++k) {
              const auto idx = (o * len + k) * inner + in;
              dot += self.grad[idx] * self.value[idx];
            }
            const T nrm = norms[o * inner + in];
            for (std::size_t k = 0; k < len; ++k) {
              const auto idx = (o * len + k) * inner + in;
              (*gx)[idx] += (self.grad[idx] - self.value[idx] * dot) / nrm;
            }
          }
      },
      "l2_normalize");
}

/// Mean over every axis after the first two: [B, C, ...] -> [B, C].
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() < 3) throw ShapeError("global_avg_pool: expected rank >= 3");
  const auto b = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.numel() / (b * c);
  std::vector<T> out(b * c);
  for (std::size_t i = 0; i < b * c; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < inner; ++j) s += x[i * inner + j];
    out[i] = s / static_cast<T>(inner);
  }
  return detail::make_result<T>({b, c}, std::move(out), {x},
      [inner, bc = b * c](Node<T>& self) {
        if (auto* gx = detail::grad_sink(self, 0)) {
          const T w = T(1) / static_cast<T>(inner);
          for (std::size_t i = 0; i < bc; ++i)
            for (std::size_t j = 0; j < inner; ++j) (*gx)[i * inner + j] += self.grad[i] * w;
        }
      },
      "global_avg_pool");
}

}  // namespace vidssl
