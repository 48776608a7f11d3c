// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vidssl/autodiff/nn_ops.hpp"

namespace vidssl {

template <class T>
struct ParamEntry {
  Tensor<T> tensor;
  std::vector<T> velocity;
  bool no_decay = false;
  bool no_lars = false;
};

/// Named trainable parameters. Iteration is lexicographic by name.
template <class T>
class ParamSet {
 public:
  using Map = std::map<std::string, ParamEntry<T>>;

  Tensor<T>& add(const std::string& name, Shape shape, std::vector<T> values,
                 bool no_decay = false, bool no_lars = false) {
    if (entries_.count(name)) throw ConfigError("ParamSet: duplicate parameter " + name);
    const auto n = values.size();
    auto [it, ok] = entries_.emplace(
        name, ParamEntry<T>{Tensor<T>::variable(std::move(shape), std::move(values)),
                            std::vector<T>(n, T(0)), no_decay, no_lars});
    return it->second.tensor;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor<T>& operator[](const std::string& name) const { return entry(name).tensor; }
  Tensor<T>& operator[](const std::string& name) { return entry(name).tensor; }

  ParamEntry<T>& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("ParamSet: unknown parameter " + name);
    return it->second;
  }
  const ParamEntry<T>& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("ParamSet: unknown parameter " + name);
    return it->second;
  }

  std::span<const T> grad(const std::string& name) const { return entry(name).tensor.grad(); }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.tensor.zero_grad();
  }

  /// Deep copy: fresh leaves, same values and flags, zero grads/velocity.
  ParamSet clone() const {
    ParamSet out;
    for (const auto& [name, e] : entries_)
      out.add(name, e.tensor.shape(),
              std::vector<T>(e.tensor.values().begin(), e.tensor.values().end()), e.no_decay,
              e.no_lars);
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.tensor.numel();
    return n;
  }

  T max_abs_grad() const {
    T m = 0;
    for (const auto& [_, e] : entries_)
      for (T g : e.tensor.grad()) m = std::max(m, std::abs(g));
    return m;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  Map entries_;
};

/// BN running statistics keyed by layer name.
template <class T>
using BufferSet = std::map<std::string, RunningStats<T>>;

}  // namespace vidssl
