// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vidssl/autodiff/param_set.hpp"
#include "vidssl/rng.hpp"

namespace vidssl {

enum class HeadRole { kProjection, kPrediction };

struct HeadConfig {
  std::size_t num_layers = 3;  // linear layers; hidden layers = num_layers - 1
  std::size_t hidden_dim = 128;
  std::size_t output_dim = 128;
  bool use_bn = true;
  HeadRole role = HeadRole::kProjection;
};

/// MLP head: [linear -> (BN) -> ReLU] x (layers-1) -> linear.
class Head {
 public:
  Head(HeadConfig cfg, std::size_t input_dim, std::string prefix)
      : cfg_(cfg), input_dim_(input_dim), prefix_(std::move(prefix)) {
    if (cfg_.num_layers < 2 || cfg_.num_layers > 4)
      throw ConfigError("head: num_layers must be in 2..4, got " +
                        std::to_string(cfg_.num_layers));
    if (input_dim_ == 0 || cfg_.hidden_dim == 0 || cfg_.output_dim == 0)
      throw ConfigError("head: dimensions must be positive");
  }

  const HeadConfig& config() const { return cfg_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return cfg_.output_dim; }

  std::size_t parameter_count() const {
    std::size_t n = 0, in = input_dim_;
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const bool last = l + 1 == cfg_.num_layers;
      const std::size_t out = last ? cfg_.output_dim : cfg_.hidden_dim;
      n += in * out + out;
      if (!last && cfg_.use_bn) n += 2 * out;
      in = out;
    }
    return n;
  }

  /// Glorot-uniform weights, zero biases.
  template <class T>
  void init(ParamSet<T>& params, BufferSet<T>& buffers, std::uint64_t seed) const {
    Rng rng(derive_seed(seed, "head-init:" + prefix_));
    std::size_t in = input_dim_;
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const bool last = l + 1 == cfg_.num_layers;
      const std::size_t out = last ? cfg_.output_dim : cfg_.hidden_dim;
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      std::vector<T> w(in * out);
      for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
      const auto name = layer_name(l);
      params.add(name + ".weight", {in, out}, std::move(w));
      params.add(name + ".bias", {1, out}, std::vector<T>(out, T(0)), true, true);
      if (!last && cfg_.use_bn) {
        params.add(name + ".bn.scale", {out}, std::vector<T>(out, T(1)), true, true);
        params.add(name + ".bn.shift", {out}, std::vector<T>(out, T(0)), true, true);
        buffers[name + ".bn"] = RunningStats<T>::identity(out);
      }
      in = out;
    }
  }

  template <class T>
  Tensor<T> forward(const ParamSet<T>& params, BufferSet<T>& buffers, const Tensor<T>& x,
                    Mode mode) const {
    if (x.rank() != 2 || x.dim(1) != input_dim_)
      throw ShapeError("head: expected [N," + std::to_string(input_dim_) + "], got " +
                       to_string(x.shape()));
    Tensor<T> h = x;
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      const auto name = layer_name(l);
      h = add(matmul(h, params[name + ".weight"]), params[name + ".bias"]);
      if (l + 1 == cfg_.num_layers) break;
      if (cfg_.use_bn)
        h = batchnorm(h, params[name + ".bn.scale"], params[name + ".bn.shift"],
                      buffers[name + ".bn"], mode);
      h = relu(h);
    }
    return h;
  }

 private:
  std::string layer_name(std::size_t l) const { return prefix_ + "l" + std::to_string(l); }

  HeadConfig cfg_;
  std::size_t input_dim_;
  std::string prefix_;
};

}  // namespace vidssl
