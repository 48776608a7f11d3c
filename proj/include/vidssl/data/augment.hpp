// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "vidssl/data/synthetic.hpp"

namespace vidssl {

inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

/// rho clips of T frames at stride tau; starts of positives lie within t_max.
struct ClipSampleSpec {
  std::size_t rho = 2;
  std::size_t frames = 4;
  std::size_t stride = 2;
  std::size_t t_max = kUnbounded;

  std::size_t span() const { return frames * stride; }
  /// Clips emitted per video: rho = 1 still yields two views of one instant.
  std::size_t views() const { return std::max<std::size_t>(rho, 2); }
};

/// Start frames of the clips drawn from one video of `length` frames.
inline std::vector<std::size_t> sample_clip_starts(std::size_t length, const ClipSampleSpec& spec,
                                                   Rng& rng) {
  if (spec.rho == 0 || spec.frames == 0 || spec.stride == 0)
    throw ConfigError("sample_clips: rho, T and tau must be positive");
  if (length < spec.span())
    throw ConfigError("sample_clips: a " + std::to_string(spec.span()) +
                      "-frame clip does not fit a " + std::to_string(length) + "-frame video");
  const std::size_t max_start = length - spec.span();
  if (spec.rho == 1) {
    const auto s = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(max_start)));
    return {s, s};
  }
  // A window of width min(t_max, max_start) placed uniformly; every start
  // drawn uniformly inside it, so all pairwise gaps are <= t_max.
  const std::size_t window = std::min(spec.t_max, max_start);
  const auto w0 = static_cast<std::size_t>(
      rng.integer(0, static_cast<std::int64_t>(max_start - window)));
  std::vector<std::size_t> starts(spec.rho);
  for (auto& s : starts)
    s = w0 + static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(window)));
  return starts;
}

enum class CropStyle { kVgg, kInception };
enum class AugGroup { kTemporal, kSpatial, kColor };

struct AugmentConfig {
  double color_strength = 0.5;
  double color_prob = 0.8;
  double grayscale_prob = 0.2;
  double temporal_diff_prob = 0.0;
  double framerate_jitter = 0.0;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  double flip_prob = 0.5;
  CropStyle crop_style = CropStyle::kVgg;
  std::size_t vgg_short_min = 32, vgg_short_max = 40;
  double inception_area_min = 0.49, inception_area_max = 0.76;
  double inception_aspect_min = 3.0 / 4.0, inception_aspect_max = 4.0 / 3.0;
  std::size_t output_size = 32;
  std::set<AugGroup> groups{AugGroup::kTemporal, AugGroup::kSpatial, AugGroup::kColor};

  bool enabled(AugGroup g) const { return groups.count(g) != 0; }
};

/// Crop in raw-frame coordinates, resampled to output_size squared.
struct CropBox {
  double top = 0, left = 0, height = 0, width = 0;
  // VGG bookkeeping: resized frame extents and integer crop origin there.
  std::size_t resized_h = 0, resized_w = 0, y0 = 0, x0 = 0;
};

/// One shared draw for every frame of a clip.
struct AugmentParams {
  CropBox crop;
  bool flip = false;
  bool jitter = false;
  double brightness = 1, contrast = 1, saturation = 1, hue = 0;
  bool grayscale = false;
  bool temporal_diff = false;
  bool blur = false;
  double sigma = 0;
};

inline CropBox vgg_crop(std::size_t raw_h, std::size_t raw_w, std::size_t out,
                        std::size_t short_min, std::size_t short_max, Rng& rng) {
  const auto short_side = static_cast<std::size_t>(rng.integer(
      static_cast<std::int64_t>(short_min), static_cast<std::int64_t>(short_max)));
  const double r = static_cast<double>(short_side) / static_cast<double>(std::min(raw_h, raw_w));
  CropBox b;
  b.resized_h = raw_h <= raw_w ? short_side : static_cast<std::size_t>(std::lround(raw_h * r));
  b.resized_w = raw_w < raw_h ? short_side : static_cast<std::size_t>(std::lround(raw_w * r));
  if (b.resized_h < out || b.resized_w < out)
    throw ConfigError("vgg crop: resized frame smaller than output size");
  b.y0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(b.resized_h - out)));
  b.x0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(b.resized_w - out)));
  const double sy = static_cast<double>(raw_h) / static_cast<double>(b.resized_h);
  const double sx = static_cast<double>(raw_w) / static_cast<double>(b.resized_w);
  b.top = b.y0 * sy;
  b.left = b.x0 * sx;
  b.height = out * sy;
  b.width = out * sx;
  return b;
}

/// Short side resized to the output, centred along the long side.
inline CropBox base_crop(std::size_t raw_h, std::size_t raw_w, std::size_t out) {
  CropBox b;
  const double side = static_cast<double>(std::min(raw_h, raw_w));
  b.height = b.width = side;
  b.top = (static_cast<double>(raw_h) - side) / 2.0;
  b.left = (static_cast<double>(raw_w) - side) / 2.0;
  b.resized_h = b.resized_w = out;
  return b;
}

inline CropBox inception_crop(std::size_t raw_h, std::size_t raw_w, const AugmentConfig& cfg,
                              Rng& rng) {
  const double area = static_cast<double>(raw_h * raw_w);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double a = rng.uniform(cfg.inception_area_min, cfg.inception_area_max) * area;
    const double logr = rng.uniform(std::log(cfg.inception_aspect_min),
                                    std::log(cfg.inception_aspect_max));
    const double aspect = std::exp(logr);
    const double w = std::sqrt(a * aspect), h = std::sqrt(a / aspect);
    if (w <= raw_w && h <= raw_h) {
      CropBox b;
      b.width = w;
      b.height = h;
      b.top = rng.uniform(0, static_cast<double>(raw_h) - h);
      b.left = rng.uniform(0, static_cast<double>(raw_w) - w);
      return b;
    }
  }
  return base_crop(raw_h, raw_w, cfg.output_size);
}

inline AugmentParams draw_augment_params(std::size_t raw_h, std::size_t raw_w,
                                         const AugmentConfig& cfg, Rng& rng) {
  AugmentParams p;
  if (cfg.enabled(AugGroup::kSpatial)) {
    p.crop = cfg.crop_style == CropStyle::kVgg
                 ? vgg_crop(raw_h, raw_w, cfg.output_size, cfg.vgg_short_min, cfg.vgg_short_max, rng)
                 : inception_crop(raw_h, raw_w, cfg, rng);
    p.flip = rng.bernoulli(cfg.flip_prob);
  } else {
    p.crop = base_crop(raw_h, raw_w, cfg.output_size);
  }
  if (cfg.enabled(AugGroup::kColor)) {
    const double s = cfg.color_strength;
    p.jitter = rng.bernoulli(cfg.color_prob);
    const double lo = std::max(0.0, 1 - 0.4 * s), hi = 1 + 0.4 * s;
    p.brightness = rng.uniform(lo, hi);
    p.contrast = rng.uniform(lo, hi);
    p.saturation = rng.uniform(lo, hi);
    p.hue = rng.uniform(-0.1 * s, 0.1 * s);
    if (!p.jitter) p.brightness = p.contrast = p.saturation = 1, p.hue = 0;
    p.grayscale = rng.bernoulli(cfg.grayscale_prob);
    p.temporal_diff = rng.bernoulli(cfg.temporal_diff_prob);
    p.blur = rng.bernoulli(cfg.blur_prob);
    p.sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    if (!p.blur) p.sigma = 0;
  }
  return p;
}

/// Frame indices of one clip; frame-rate jitter scales the stride by a factor
/// in [1 - j, 1 + j] (temporal group only). Indices clamp to the video end.
inline std::vector<std::size_t> clip_frame_indices(std::size_t start, std::size_t length,
                                                   const ClipSampleSpec& spec, double jitter_factor) {
  std::vector<std::size_t> idx(spec.frames);
  const double stride = static_cast<double>(spec.stride) * jitter_factor;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const auto off = static_cast<std::size_t>(std::lround(static_cast<double>(t) * stride));
    idx[t] = std::min(start + off, length - 1);
  }
  return idx;
}

namespace detail {

inline double gray(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r) h = (g - b) / d;
  else if (mx == g) h = 2 + (b - r) / d;
  else h = 4 + (r - g) / d;
  h /= 6;
  if (h < 0) h += 1;
}

inline void blur_plane(float* plane, std::size_t n, double sigma, std::vector<float>& scratch) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double ks = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i)
    ks += k[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  for (auto& w : k) w /= ks;
  scratch.assign(n * n, 0.f);
  const auto sn = static_cast<std::ptrdiff_t>(n);
  const auto clampi = [sn](std::ptrdiff_t i) { return std::clamp<std::ptrdiff_t>(i, 0, sn - 1); };
  for (std::ptrdiff_t y = 0; y < sn; ++y)
    for (std::ptrdiff_t x = 0; x < sn; ++x) {
      double acc = 0;
      for (std::ptrdiff_t i = -radius; i <= radius; ++i) acc += k[i + radius] * plane[y * sn + clampi(x + i)];
      scratch[y * sn + x] = static_cast<float>(acc);
    }
  for (std::ptrdiff_t y = 0; y < sn; ++y)
    for (std::ptrdiff_t x = 0; x < sn; ++x) {
      double acc = 0;
      for (std::ptrdiff_t i = -radius; i <= radius; ++i) acc += k[i + radius] * scratch[clampi(y + i) * sn + x];
      plane[y * sn + x] = static_cast<float>(acc);
    }
}

}  // namespace detail

/// Renders one augmented clip [3, T, S, S] from `video` at the given frame
/// indices. Order: crop+resize, flip, colour jitter, grayscale, temporal
/// difference, blur.
inline std::vector<float> apply_augment(const Dataset& data, std::size_t video,
                                        const std::vector<std::size_t>& frame_idx,
                                        const AugmentParams& p, std::size_t out) {
  const std::size_t T = frame_idx.size(), H = data.height, W = data.width;
  const std::size_t plane = out * out;
  std::vector<float> clip(3 * T * plane);
  const auto at = [&](std::size_t c, std::size_t t) { return clip.data() + (c * T + t) * plane; };

  // Bilinear resample of the crop box; pixel centres map exactly when the box
  // equals the frame and out == H == W.
  std::vector<std::size_t> y0(out), y1(out), x0(out), x1(out);
  std::vector<double> wy(out), wx(out);
  const auto axis = [](double origin, double extent, std::size_t n, std::size_t limit,
                       std::size_t i, std::size_t& a, std::size_t& b, double& w) {
    double src = origin + (static_cast<double>(i) + 0.5) * extent / static_cast<double>(n) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(limit - 1));
    a = static_cast<std::size_t>(std::floor(src));
    b = std::min(a + 1, limit - 1);
    w = src - static_cast<double>(a);
  };
  for (std::size_t i = 0; i < out; ++i) {
    axis(p.crop.top, p.crop.height, out, H, i, y0[i], y1[i], wy[i]);
    axis(p.crop.left, p.crop.width, out, W, i, x0[i], x1[i], wx[i]);
  }
  for (std::size_t t = 0; t < T; ++t) {
    const float* f = data.frame(video, frame_idx[t]);
    for (std::size_t c = 0; c < 3; ++c) {
      const float* src = f + c * H * W;
      float* dst = at(c, t);
      for (std::size_t i = 0; i < out; ++i)
        for (std::size_t j = 0; j < out; ++j) {
          const std::size_t jj = p.flip ? out - 1 - j : j;
          const double top = (1 - wx[jj]) * src[y0[i] * W + x0[jj]] + wx[jj] * src[y0[i] * W + x1[jj]];
          const double bot = (1 - wx[jj]) * src[y1[i] * W + x0[jj]] + wx[jj] * src[y1[i] * W + x1[jj]];
          const double v = wy[i] == 0 ? top : (1 - wy[i]) * top + wy[i] * bot;
          dst[i * out + j] = static_cast<float>(v);
        }
    }
  }

  const std::size_t n = T * plane;
  float* R = at(0, 0);
  float* G = at(1, 0);
  float* B = at(2, 0);
  const auto clamp01 = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
  if (p.jitter) {
    for (std::size_t i = 0; i < n; ++i) {
      R[i] = clamp01(R[i] * p.brightness);
      G[i] = clamp01(G[i] * p.brightness);
      B[i] = clamp01(B[i] * p.brightness);
    }
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += detail::gray(R[i], G[i], B[i]);
    mean /= static_cast<double>(n);
    for (float* ch : {R, G, B})
      for (std::size_t i = 0; i < n; ++i) ch[i] = clamp01((ch[i] - mean) * p.contrast + mean);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = detail::gray(R[i], G[i], B[i]);
      R[i] = clamp01(g + p.saturation * (R[i] - g));
      G[i] = clamp01(g + p.saturation * (G[i] - g));
      B[i] = clamp01(g + p.saturation * (B[i] - g));
    }
    if (p.hue != 0)
      for (std::size_t i = 0; i < n; ++i) {
        double h, s, v, rgb[3];
        detail::rgb_to_hsv(R[i], G[i], B[i], h, s, v);
        detail::hsv_to_rgb(h + p.hue, s, v, rgb);
        R[i] = clamp01(rgb[0]);
        G[i] = clamp01(rgb[1]);
        B[i] = clamp01(rgb[2]);
      }
  }
  if (p.grayscale || p.temporal_diff)
    for (std::size_t i = 0; i < n; ++i) R[i] = G[i] = B[i] = static_cast<float>(detail::gray(R[i], G[i], B[i]));
  if (p.temporal_diff) {
    // d_t = g_{t+1} - g_t; the last frame repeats the previous difference.
    for (std::size_t t = 0; t + 1 < T; ++t)
      for (std::size_t i = 0; i < plane; ++i) R[t * plane + i] = R[(t + 1) * plane + i] - R[t * plane + i];
    if (T > 1) std::copy_n(R + (T - 2) * plane, plane, R + (T - 1) * plane);
    else std::fill_n(R, plane, 0.f);
    std::copy_n(R, n, G);
    std::copy_n(R, n, B);
  }
  if (p.blur && p.sigma > 0) {
    std::vector<float> scratch;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < T; ++t) detail::blur_plane(at(c, t), out, p.sigma, scratch);
  }
  return clip;
}

}  // namespace vidssl
