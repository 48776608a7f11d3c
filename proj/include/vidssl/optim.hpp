// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "vidssl/autodiff/param_set.hpp"

namespace vidssl {

struct OptimConfig {
  double base_lr = 0.4;  // eta
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool use_lars = false;
  double lars_trust = 0.001;
  std::size_t warmup_iters = 0;
  std::size_t total_iters = 1;  // n_max

  void validate() const {
    if (!(base_lr > 0)) throw ConfigError("optim: base_lr must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("optim: momentum must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("optim: weight_decay must be non-negative");
    if (total_iters == 0) throw ConfigError("optim: total_iters must be positive");
    if (warmup_iters > total_iters) throw ConfigError("optim: warmup_iters exceeds total_iters");
  }
};

/// Half-period cosine, multiplied by a linear ramp during warmup.
inline double lr_at(std::size_t n, const OptimConfig& cfg) {
  const double frac = static_cast<double>(n) / static_cast<double>(cfg.total_iters);
  double lr = cfg.base_lr * 0.5 * (std::cos(frac * std::numbers::pi) + 1.0);
  if (cfg.warmup_iters > 0 && n < cfg.warmup_iters)
    lr *= static_cast<double>(n) / static_cast<double>(cfg.warmup_iters);
  return lr;
}

/// trust * |p| / (|g| + wd * |p|); 1 when exempt or either norm vanishes.
template <class T>
double lars_local_lr(std::span<const T> param, std::span<const T> grad, double trust,
                     double weight_decay, bool exempt = false) {
  if (exempt) return 1.0;
  double pn = 0, gn = 0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    pn += static_cast<double>(param[i]) * param[i];
    gn += static_cast<double>(grad[i]) * grad[i];
  }
  pn = std::sqrt(pn);
  gn = std::sqrt(gn);
  if (pn == 0 || gn == 0) return 1.0;
  return trust * pn / (gn + weight_decay * pn);
}

/// SGD with momentum, decay and optional LARS at iteration n. Clears grads.
template <class T>
void sgd_step(ParamSet<T>& params, const OptimConfig& cfg, std::size_t n) {
  const double lr = lr_at(n, cfg);
  for (auto& [name, e] : params) {
    const auto g = e.tensor.mutable_grad();  // sized even if nothing reached it
    for (T x : g)
      if (!std::isfinite(x)) throw NumericError("optimizer: non-finite gradient in " + name);
  }
  for (auto& [name, e] : params) {
    auto p = e.tensor.mutable_values();
    const auto g = e.tensor.grad();
    const double wd = e.no_decay ? 0.0 : cfg.weight_decay;
    const double factor = cfg.use_lars ? lars_local_lr<T>(p, g, cfg.lars_trust, wd, e.no_lars) : 1.0;
    const T step = static_cast<T>(lr * factor);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T gi = wd > 0 ? g[i] + static_cast<T>(wd) * p[i] : g[i];
      e.velocity[i] = static_cast<T>(cfg.momentum) * e.velocity[i] + gi;
      p[i] -= step * e.velocity[i];
    }
    e.tensor.zero_grad();
  }
}

}  // namespace vidssl
