// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "vidssl/error.hpp"
#include "vidssl/rng.hpp"

namespace vidssl {

/// Generator parameters behind one synthetic video.
struct VideoLatent {
  // Class-persistent foreground: a blob oscillating along a line.
  double hue = 0, radius = 0, direction = 0, frequency = 0, amplitude = 0, phase = 0;
  double center_y = 0, center_x = 0;
  // Per-video nuisance.
  double background = 0;
  double tint[3] = {0, 0, 0};
  // Segment boundaries of the time-local distractor pattern (start frames).
  std::vector<std::size_t> segment_starts;
};

/// Frames are [L, 3, H, W] in [0, 1], row-major.
struct SynthVideo {
  std::vector<float> frames;
  std::uint32_t label = 0;
  VideoLatent latent;
};

struct Dataset {
  std::size_t num_classes = 0;
  std::size_t length = 0;  // frames per video (L)
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint64_t seed = 0;
  std::vector<SynthVideo> videos;

  std::size_t frame_size() const { return 3 * height * width; }
  const float* frame(std::size_t video, std::size_t t) const {
    return videos[video].frames.data() + t * frame_size();
  }
  std::size_t size() const { return videos.size(); }
};

struct DatasetSpec {
  std::size_t num_videos = 512;
  std::size_t num_classes = 8;
  std::size_t length = 64;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;
  // Mean duration (frames) of one distractor segment.
  std::size_t segment_length = 8;
  // Scales the distractor grating amplitude.
  double distractor_gain = 1.0;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int c = 0; c < 3; ++c) rgb[c] = table[i][c];
}

}  // namespace detail

/// Class-conditioned moving blob over a per-video background, overlaid with a
/// grating whose orientation, frequency and colour are re-drawn at every
/// segment boundary. The blob carries the class; the grating only identifies
/// a short time window of one video.
inline SynthVideo render_video(const DatasetSpec& spec, std::size_t index) {
  const std::size_t C = spec.num_classes;
  const std::size_t H = spec.height, W = spec.width, L = spec.length;
  SynthVideo v;
  v.label = static_cast<std::uint32_t>(index % C);
  const double c = static_cast<double>(v.label);
  Rng rng(derive_seed(spec.seed, "video", index));

  auto& z = v.latent;
  // Disjoint class ranges: each class owns a slice of hue and direction.
  z.hue = (c + rng.uniform(0.3, 0.7)) / static_cast<double>(C);
  z.direction = std::numbers::pi * (c + rng.uniform(0.3, 0.7)) / static_cast<double>(C);
  z.frequency = 2 * std::numbers::pi * (0.03 + 0.01 * (static_cast<double>(v.label % 4) + rng.uniform(0.2, 0.8)));
  z.radius = std::min(H, W) * (0.16 + 0.06 * static_cast<double>((v.label / 4) % 2) + rng.uniform(0, 0.02));
  z.amplitude = std::min(H, W) * rng.uniform(0.15, 0.25);
  z.phase = rng.uniform(0, 2 * std::numbers::pi);
  z.center_y = H * rng.uniform(0.4, 0.6);
  z.center_x = W * rng.uniform(0.4, 0.6);
  z.background = rng.uniform(0.25, 0.55);
  for (double& t : z.tint) t = rng.uniform(-0.05, 0.05);

  struct Segment {
    double orient, freq, phase, amp, drift;
    double color[3];
  };
  std::vector<Segment> segments;
  for (std::size_t t = 0; t < L;) {
    z.segment_starts.push_back(t);
    Segment s{};
    s.orient = rng.uniform(0, std::numbers::pi);
    s.freq = 2 * std::numbers::pi * rng.uniform(0.08, 0.3);
    s.phase = rng.uniform(0, 2 * std::numbers::pi);
    s.amp = spec.distractor_gain * rng.uniform(0.36, 0.66);
    s.drift = rng.uniform(-0.3, 0.3);
    detail::hsv_to_rgb(rng.uniform(), rng.uniform(0.3, 1.0), 1.0, s.color);
    segments.push_back(s);
    const auto half = std::max<std::size_t>(1, spec.segment_length / 2);
    t += static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(spec.segment_length - half / 2),
                                              static_cast<std::int64_t>(spec.segment_length + half / 2)));
  }

  double blob_rgb[3];
  detail::hsv_to_rgb(z.hue, 0.85, 0.95, blob_rgb);

  v.frames.assign(L * 3 * H * W, 0.f);
  std::size_t seg = 0;
  for (std::size_t t = 0; t < L; ++t) {
    while (seg + 1 < segments.size() && z.segment_starts[seg + 1] <= t) ++seg;
    const Segment& s = segments[seg];
    const double local_t = static_cast<double>(t - z.segment_starts[seg]);
    const double offset = z.amplitude * std::sin(z.frequency * static_cast<double>(t) + z.phase);
    const double by = z.center_y + offset * std::sin(z.direction);
    const double bx = z.center_x + offset * std::cos(z.direction);
    const double co = std::cos(s.orient), so = std::sin(s.orient);
    float* f = v.frames.data() + t * 3 * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double u = co * static_cast<double>(x) + so * static_cast<double>(y);
        const double grating = s.amp * std::sin(s.freq * u + s.phase + s.drift * local_t);
        const double dy = static_cast<double>(y) - by, dx = static_cast<double>(x) - bx;
        const double d = std::sqrt(dy * dy + dx * dx);
        // Soft-edged disc.
        const double alpha = std::clamp(z.radius + 0.5 - d, 0.0, 1.0);
        for (int ch = 0; ch < 3; ++ch) {
          const double bg = z.background + z.tint[ch] + grating * s.color[ch];
          const double val = (1 - alpha) * bg + alpha * blob_rgb[ch];
          f[(ch * H + y) * W + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
  }
  return v;
}

inline Dataset gen_dataset(const DatasetSpec& spec, std::size_t min_length = 1) {
  if (spec.num_videos == 0 || spec.num_classes == 0 || spec.length == 0 || spec.height == 0 ||
      spec.width == 0 || spec.segment_length == 0)
    throw ConfigError("gen_dataset: all sizes must be positive");
  if (spec.length < min_length)
    throw ConfigError("gen_dataset: video length " + std::to_string(spec.length) +
                      " shorter than one clip (" + std::to_string(min_length) + " frames)");
  Dataset d;
  d.num_classes = spec.num_classes;
  d.length = spec.length;
  d.height = spec.height;
  d.width = spec.width;
  d.seed = spec.seed;
  d.videos.reserve(spec.num_videos);
  for (std::size_t i = 0; i < spec.num_videos; ++i) d.videos.push_back(render_video(spec, i));
  return d;
}

}  // namespace vidssl
