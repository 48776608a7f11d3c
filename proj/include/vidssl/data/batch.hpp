// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <numeric>
#include <vector>

#include "vidssl/autodiff/tensor.hpp"
#include "vidssl/data/augment.hpp"

namespace vidssl {

/// rho*B augmented clips, view-major: clip n = v * B + b.
struct ClipBatch {
  std::size_t videos_per_batch = 0;  // B
  std::size_t views = 0;
  std::size_t frames = 0;
  std::size_t size = 0;  // output spatial extent
  std::vector<float> data;  // [views*B, 3, T, S, S]
  std::vector<std::size_t> video;   // dataset index per clip
  std::vector<std::size_t> group;   // batch slot b per clip (positives share it)
  std::vector<std::size_t> start;   // first raw frame per clip

  std::size_t num_clips() const { return views * videos_per_batch; }
  std::size_t clip_numel() const { return 3 * frames * size * size; }
  Shape shape() const { return {num_clips(), 3, frames, size, size}; }

  /// Clips [first, first + count) as a tensor.
  template <class T>
  Tensor<T> clips(std::size_t first, std::size_t count) const {
    const auto n = clip_numel();
    std::vector<T> v(data.begin() + static_cast<std::ptrdiff_t>(first * n),
                     data.begin() + static_cast<std::ptrdiff_t>((first + count) * n));
    return Tensor<T>::constant({count, 3, frames, size, size}, std::move(v));
  }

  std::vector<std::vector<std::size_t>> groups() const {
    std::vector<std::vector<std::size_t>> g(videos_per_batch);
    for (std::size_t n = 0; n < num_clips(); ++n) g[group[n]].push_back(n);
    return g;
  }
};

/// Augments one clip of `video` starting at `start`. Randomness derives from
/// (seed, video, clip) only.
inline std::vector<float> augment_clip(const Dataset& data, std::size_t video, std::size_t start,
                                       const ClipSampleSpec& spec, const AugmentConfig& cfg,
                                       std::uint64_t seed, AugmentParams* drawn = nullptr) {
  Rng rng(seed);
  double rate = 1.0;
  if (cfg.enabled(AugGroup::kTemporal) && cfg.framerate_jitter > 0)
    rate = rng.uniform(1 - cfg.framerate_jitter, 1 + cfg.framerate_jitter);
  const auto idx = clip_frame_indices(start, data.length, spec, rate);
  const auto p = draw_augment_params(data.height, data.width, cfg, rng);
  if (drawn) *drawn = p;
  return apply_augment(data, video, idx, p, cfg.output_size);
}

/// Draws B distinct videos and rho (at least two) clips of each.
inline ClipBatch make_batch(const Dataset& data, std::size_t B, ClipSampleSpec spec,
                            const AugmentConfig& cfg, std::uint64_t seed) {
  if (B == 0 || B > data.size())
    throw ConfigError("make_batch: batch size " + std::to_string(B) + " outside 1.." +
                      std::to_string(data.size()));
  if (!cfg.enabled(AugGroup::kTemporal)) spec.t_max = 0;
  ClipBatch batch;
  batch.videos_per_batch = B;
  batch.views = spec.views();
  batch.frames = spec.frames;
  batch.size = cfg.output_size;
  const auto N = batch.num_clips();
  batch.data.resize(N * batch.clip_numel());
  batch.video.resize(N);
  batch.group.resize(N);
  batch.start.resize(N);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng pick(derive_seed(seed, "batch.videos"));
  for (std::size_t i = 0; i < B; ++i) {
    const auto j = static_cast<std::size_t>(
        pick.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(order.size() - 1)));
    std::swap(order[i], order[j]);
  }
  for (std::size_t b = 0; b < B; ++b) {
    const auto vid = order[b];
    Rng srng(derive_seed(seed, "batch.starts", vid));
    const auto starts = sample_clip_starts(data.length, spec, srng);
    for (std::size_t v = 0; v < batch.views; ++v) {
      const auto n = v * B + b;
      batch.video[n] = vid;
      batch.group[n] = b;
      batch.start[n] = starts[v];
      const auto clip =
          augment_clip(data, vid, starts[v], spec, cfg, derive_seed(seed, "batch.augment", vid, v));
      std::copy(clip.begin(), clip.end(), batch.data.begin() + static_cast<std::ptrdiff_t>(n * clip.size()));
    }
  }
  return batch;
}

}  // namespace vidssl
