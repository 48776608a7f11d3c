// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "vidssl/autodiff/param_set.hpp"
#include "vidssl/rng.hpp"

namespace vidssl {

/// Slow-pathway ResNet shape. Temporal extent is never strided; only the
/// final global pool collapses time.
struct EncoderConfig {
  std::size_t frames = 4;       // T
  std::size_t stride = 2;       // tau, consumed by the sampler
  std::size_t input_size = 32;  // S
  std::size_t stem_channels = 8;
  std::vector<std::size_t> blocks{1, 1, 1, 1};
  std::vector<std::size_t> channels{8, 16, 32, 64};
  std::size_t bottleneck_divisor = 2;
  std::set<std::size_t> temporal_stages{2, 3};
  bool zero_init_last_bn = true;

  /// Full-size R-50 Slow 8x8 (structure only; too large to train here).
  static EncoderConfig r50_slow() {
    EncoderConfig c;
    c.frames = 8;
    c.stride = 8;
    c.input_size = 224;
    c.stem_channels = 64;
    c.blocks = {3, 4, 6, 3};
    c.channels = {256, 512, 1024, 2048};
    c.bottleneck_divisor = 4;
    return c;
  }
};

class Encoder {
 public:
  struct Block {
    std::string name;
    std::size_t in, inner, out, spatial_stride, temporal_kernel;
    bool projection;
  };

  explicit Encoder(EncoderConfig cfg, std::string prefix = "enc.")
      : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    if (cfg_.blocks.size() != cfg_.channels.size() || cfg_.blocks.empty())
      throw ConfigError("encoder: stage block/channel lists differ in length");
    if (cfg_.frames == 0 || cfg_.stem_channels == 0 || cfg_.bottleneck_divisor == 0)
      throw ConfigError("encoder: frames, stem channels and divisor must be positive");
    for (auto c : cfg_.channels)
      if (c == 0 || c % cfg_.bottleneck_divisor != 0)
        throw ConfigError("encoder: stage channels must be positive multiples of the divisor");
    for (auto n : cfg_.blocks)
      if (n == 0) throw ConfigError("encoder: stage with zero blocks");
    for (auto s : cfg_.temporal_stages)
      if (s >= cfg_.blocks.size()) throw ConfigError("encoder: temporal stage out of range");

    std::size_t in = cfg_.stem_channels;
    std::size_t size = spatial_after(cfg_.input_size, 7, 2, 3);
    size = spatial_after(size, 3, 2, 1);
    for (std::size_t s = 0; s < cfg_.blocks.size(); ++s) {
      const std::size_t out = cfg_.channels[s];
      for (std::size_t j = 0; j < cfg_.blocks[s]; ++j) {
        const std::size_t stride = (j == 0 && s > 0) ? 2 : 1;
        Block b{prefix_ + "s" + std::to_string(s + 2) + ".b" + std::to_string(j), in,
                out / cfg_.bottleneck_divisor, out, stride,
                cfg_.temporal_stages.count(s) ? std::size_t{3} : std::size_t{1},
                in != out || stride != 1};
        blocks_.push_back(b);
        size = spatial_after(size, 3, stride, 1);
        in = out;
      }
    }
    final_spatial_ = size;
  }

  const EncoderConfig& config() const { return cfg_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t output_dim() const { return cfg_.channels.back(); }
  std::size_t final_spatial() const { return final_spatial_; }

  /// Parameter count from the structure alone (conv weights + BN affine).
  std::size_t parameter_count() const {
    std::size_t n = 3 * cfg_.stem_channels * 49 + 2 * cfg_.stem_channels;
    for (const auto& b : blocks_) {
      n += b.in * b.inner * b.temporal_kernel + 2 * b.inner;
      n += b.inner * b.inner * 9 + 2 * b.inner;
      n += b.inner * b.out + 2 * b.out;
      if (b.projection) n += b.in * b.out + 2 * b.out;
    }
    return n;
  }

  /// He (fan-in) Gaussian conv init; BN scale 1, shift 0.
  template <class T>
  void init(ParamSet<T>& params, BufferSet<T>& buffers, std::uint64_t seed) const {
    Rng rng(derive_seed(seed, "encoder-init"));
    const auto conv = [&](const std::string& name, Shape shape) {
      const std::size_t fan_in = shape[1] * shape[2] * shape[3] * shape[4];
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      std::vector<T> w(numel(shape));
      for (auto& v : w) v = static_cast<T>(rng.normal() * sd);
      params.add(name, std::move(shape), std::move(w));
    };
    const auto bn = [&](const std::string& name, std::size_t c, bool zero_scale) {
      params.add(name + ".scale", {c}, std::vector<T>(c, zero_scale ? T(0) : T(1)), true, true);
      params.add(name + ".shift", {c}, std::vector<T>(c, T(0)), true, true);
      buffers[name] = RunningStats<T>::identity(c);
    };
    conv(prefix_ + "stem.conv", {cfg_.stem_channels, 3, 1, 7, 7});
    bn(prefix_ + "stem.bn", cfg_.stem_channels, false);
    for (const auto& b : blocks_) {
      conv(b.name + ".conv_a", {b.inner, b.in, b.temporal_kernel, 1, 1});
      bn(b.name + ".bn_a", b.inner, false);
      conv(b.name + ".conv_b", {b.inner, b.inner, 1, 3, 3});
      bn(b.name + ".bn_b", b.inner, false);
      conv(b.name + ".conv_c", {b.out, b.inner, 1, 1, 1});
      bn(b.name + ".bn_c", b.out, cfg_.zero_init_last_bn);
      if (b.projection) {
        conv(b.name + ".shortcut", {b.out, b.in, 1, 1, 1});
        bn(b.name + ".shortcut_bn", b.out, false);
      }
    }
  }

  /// clips [N, 3, T, H, W] -> pooled features [N, C].
  template <class T>
  Tensor<T> forward(const ParamSet<T>& params, BufferSet<T>& buffers, const Tensor<T>& clips,
                    Mode mode, std::size_t bn_groups = 1) const {
    if (clips.rank() != 5 || clips.dim(1) != 3)
      throw ShapeError("encoder: expected [N,3,T,H,W] clips, got " + to_string(clips.shape()));
    if (clips.dim(2) != cfg_.frames)
      throw ShapeError("encoder: clip has " + std::to_string(clips.dim(2)) + " frames, expected " +
                       std::to_string(cfg_.frames));
    const BatchNormOptions bopt{0.1, 1e-5, bn_groups};
    const auto bn = [&](const Tensor<T>& x, const std::string& name) {
      return batchnorm(x, params[name + ".scale"], params[name + ".shift"], buffers[name], mode,
                       bopt);
    };
    Tensor<T> x = conv3d(clips, params[prefix_ + "stem.conv"], {1, 2, 2}, {0, 3, 3});
    x = relu(bn(x, prefix_ + "stem.bn"));
    x = max_pool3d(x, {1, 3, 3}, {1, 2, 2}, {0, 1, 1});
    for (const auto& b : blocks_) {
      const std::size_t pt = b.temporal_kernel / 2;
      Tensor<T> y = conv3d(x, params[b.name + ".conv_a"], {1, 1, 1}, {pt, 0, 0});
      y = relu(bn(y, b.name + ".bn_a"));
      y = conv3d(y, params[b.name + ".conv_b"], {1, b.spatial_stride, b.spatial_stride}, {0, 1, 1});
      y = relu(bn(y, b.name + ".bn_b"));
      y = bn(conv3d(y, params[b.name + ".conv_c"], {1, 1, 1}, {0, 0, 0}), b.name + ".bn_c");
      Tensor<T> shortcut = x;
      if (b.projection)
        shortcut = bn(conv3d(x, params[b.name + ".shortcut"],
                             {1, b.spatial_stride, b.spatial_stride}, {0, 0, 0}),
                      b.name + ".shortcut_bn");
      x = relu(add(y, shortcut));
    }
    return global_avg_pool(x);
  }

 private:
  static std::size_t spatial_after(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
    if (in + 2 * p < k || (s > 1 && in < 2))
      throw ConfigError("encoder: spatial size collapses before the last stage (input " +
                        std::string("size too small)"));
    return (in + 2 * p - k) / s + 1;
  }

  EncoderConfig cfg_;
  std::string prefix_;
  std::vector<Block> blocks_;
  std::size_t final_spatial_ = 0;
};

}  // namespace vidssl
