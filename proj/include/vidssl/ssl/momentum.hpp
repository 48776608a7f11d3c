// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <deque>
#include <numbers>
#include <vector>

#include "vidssl/autodiff/param_set.hpp"

namespace vidssl {

/// m = 1 - (1 - m_base) * (cos(pi k / K) + 1) / 2
inline double momentum_schedule(std::size_t k, std::size_t K, double m_base) {
  if (K == 0) throw ConfigError("momentum_schedule: K must be positive");
  if (k > K) throw ConfigError("momentum_schedule: k exceeds K");
  const double c = std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(K));
  return 1.0 - (1.0 - m_base) * (c + 1.0) / 2.0;
}

/// theta_m <- m theta_m + (1 - m) theta, entry by entry.
template <class T>
void momentum_update(const ParamSet<T>& online, ParamSet<T>& target, double m) {
  if (!(m >= 0 && m <= 1)) throw ConfigError("momentum_update: m outside [0,1]");
  if (online.size() != target.size())
    throw ConfigError("momentum_update: parameter sets differ in size");
  for (auto& [name, e] : target) {
    if (!online.contains(name)) throw ConfigError("momentum_update: no online parameter " + name);
    const auto src = online[name].values();
    auto dst = e.tensor.mutable_values();
    if (src.size() != dst.size()) throw ShapeError("momentum_update: shape mismatch at " + name);
    const T mm = static_cast<T>(m), om = static_cast<T>(1.0 - m);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = mm * dst[i] + om * src[i];
  }
}

/// FIFO of unit-norm embeddings; oldest entries fall off at capacity.
template <class T>
class EmbeddingQueue {
 public:
  EmbeddingQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
    if (capacity == 0) throw ConfigError("queue: capacity must be positive");
    if (dim == 0) throw ConfigError("queue: dimension must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }

  /// Appends rows of `keys` [n, dim].
  void push(const std::vector<T>& keys) {
    if (keys.size() % dim_ != 0) throw ShapeError("queue: key block not a multiple of dim");
    for (std::size_t r = 0; r < keys.size() / dim_; ++r) {
      std::vector<T> row(keys.begin() + static_cast<std::ptrdiff_t>(r * dim_),
                         keys.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim_));
      double s = 0;
      for (T v : row) s += static_cast<double>(v) * v;
      if (std::abs(std::sqrt(s) - 1.0) > 1e-4) throw NumericError("queue: key is not unit-norm");
      rows_.push_back(std::move(row));
      if (rows_.size() > capacity_) rows_.pop_front();
    }
  }

  /// Oldest first, [size, dim].
  std::vector<T> contents() const {
    std::vector<T> out;
    out.reserve(rows_.size() * dim_);
    for (const auto& r : rows_) out.insert(out.end(), r.begin(), r.end());
    return out;
  }

  /// Constant tensor of the current entries; undefined when empty.
  Tensor<T> snapshot() const {
    if (rows_.empty()) return {};
    return Tensor<T>::constant({rows_.size(), dim_}, contents());
  }

  void clear() { rows_.clear(); }

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::deque<std::vector<T>> rows_;
};

}  // namespace vidssl
