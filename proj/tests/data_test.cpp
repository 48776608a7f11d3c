// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vidssl/data/batch.hpp"
#include "vidssl/data/dataset_io.hpp"

namespace vidssl {
namespace {

DatasetSpec small_spec(std::size_t videos = 32, std::size_t classes = 8) {
  DatasetSpec s;
  s.num_videos = videos;
  s.num_classes = classes;
  s.length = 24;
  s.height = 16;
  s.width = 16;
  s.seed = 11;
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("vidssl_" + name);
}

TEST(Dataset, SameSeedIsBitwiseIdentical) {
  const auto a = gen_dataset(small_spec());
  const auto b = gen_dataset(small_spec());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.videos[i].label, b.videos[i].label);
    EXPECT_EQ(a.videos[i].frames, b.videos[i].frames);
  }
  auto other = small_spec();
  other.seed = 12;
  EXPECT_NE(gen_dataset(other).videos[0].frames, a.videos[0].frames);
}

TEST(Dataset, ValuesInUnitRangeAndBalancedLabels) {
  const auto d = gen_dataset(small_spec());
  std::vector<int> counts(d.num_classes, 0);
  for (const auto& v : d.videos) {
    ++counts[v.label];
    for (float x : v.frames) ASSERT_TRUE(x >= 0.f && x <= 1.f);
  }
  for (int c : counts) EXPECT_EQ(c, 4);
}

TEST(Dataset, RejectsShortVideosAndZeroSizes) {
  auto s = small_spec();
  EXPECT_THROW(gen_dataset(s, s.length + 1), ConfigError);
  s.num_videos = 0;
  EXPECT_THROW(gen_dataset(s), ConfigError);
}

// Multinomial logistic regression on per-channel centre-frame statistics,
// trained by plain full-batch gradient descent. Independent of the library's
// autodiff and probe code.
TEST(Dataset, LabelsRecoverableFromCentreFrames) {
  auto spec = small_spec(160, 8);
  const auto d = gen_dataset(spec);
  const std::size_t F = 7, C = d.num_classes;
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  const std::size_t hw = d.height * d.width;
  for (std::size_t v = 0; v < d.size(); ++v) {
    const float* f = d.frame(v, d.length / 2);
    std::vector<double> feat(F, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0, mx = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        s += f[c * hw + i];
        mx = std::max(mx, static_cast<double>(f[c * hw + i]));
      }
      feat[c] = s / hw;
      feat[3 + c] = mx;
    }
    feat[6] = 1.0;
    x.push_back(feat);
    y.push_back(d.videos[v].label);
  }
  const std::size_t n_train = 120;
  std::vector<double> w(F * C, 0.0);
  for (int it = 0; it < 3000; ++it) {
    std::vector<double> g(F * C, 0.0);
    for (std::size_t i = 0; i < n_train; ++i) {
      std::vector<double> z(C);
      double mx = -1e300;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t f = 0; f < F; ++f) z[c] += w[f * C + c] * x[i][f];
        mx = std::max(mx, z[c]);
      }
      double s = 0;
      for (auto& v : z) s += v = std::exp(v - mx);
      for (std::size_t c = 0; c < C; ++c) {
        const double r = z[c] / s - (c == y[i] ? 1.0 : 0.0);
        for (std::size_t f = 0; f < F; ++f) g[f * C + c] += r * x[i][f] / n_train;
      }
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 5.0 * g[k];
  }
  std::size_t correct = 0;
  for (std::size_t i = n_train; i < x.size(); ++i) {
    std::size_t best = 0;
    double best_z = -1e300;
    for (std::size_t c = 0; c < C; ++c) {
      double z = 0;
      for (std::size_t f = 0; f < F; ++f) z += w[f * C + c] * x[i][f];
      if (z > best_z) best_z = z, best = c;
    }
    correct += best == y[i];
  }
  const double acc = static_cast<double>(correct) / (x.size() - n_train);
  EXPECT_GT(acc, 2.0 / C) << "accuracy " << acc;
}

TEST(DatasetIo, RoundTripIsBitwiseAndHeaderMatches) {
  const auto d = gen_dataset(small_spec(10, 3));
  const auto path = temp_file("roundtrip.bin");
  write_dataset(d, path.string());
  const auto r = read_dataset(path.string());
  EXPECT_EQ(r.size(), 10u);
  EXPECT_EQ(r.num_classes, 3u);
  EXPECT_EQ(r.length, d.length);
  EXPECT_EQ(r.seed, d.seed);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(r.videos[i].label, d.videos[i].label);
    EXPECT_EQ(r.videos[i].frames, d.videos[i].frames);
  }
  std::filesystem::remove(path);
}

TEST(DatasetIo, TruncationAndBadMagicAreDataErrors) {
  const auto d = gen_dataset(small_spec(4, 2));
  const auto path = temp_file("trunc.bin");
  write_dataset(d, path.string());
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 10);
  EXPECT_THROW(read_dataset(path.string()), DataError);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(read_dataset(path.string()), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_dataset(path.string()), DataError);
}

TEST(Sampler, ZeroTimespanGivesEqualStarts) {
  ClipSampleSpec s{2, 4, 2, 0};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto st = sample_clip_starts(64, s, rng);
    ASSERT_EQ(st.size(), 2u);
    EXPECT_EQ(st[0], st[1]);
  }
}

TEST(Sampler, SingleClipEmitsSameInstantTwice) {
  ClipSampleSpec s{1, 4, 2, kUnbounded};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto st = sample_clip_starts(64, s, rng);
    ASSERT_EQ(st.size(), 2u);
    EXPECT_EQ(st[0], st[1]);
  }
}

TEST(Sampler, UnboundedGapApproachesFullRange) {
  ClipSampleSpec s{2, 4, 2, kUnbounded};
  const std::size_t L = 64, range = L - s.span();
  std::size_t max_gap = 0;
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const auto st = sample_clip_starts(L, s, rng);
    const auto gap = st[0] > st[1] ? st[0] - st[1] : st[1] - st[0];
    EXPECT_LE(gap, range);
    max_gap = std::max(max_gap, gap);
  }
  EXPECT_GE(max_gap, range - 1);
}

TEST(Sampler, PairwiseGapNeverExceedsTimespan) {
  Rng meta(5);
  for (int trial = 0; trial < 300; ++trial) {
    ClipSampleSpec s;
    s.rho = static_cast<std::size_t>(meta.integer(2, 5));
    s.frames = static_cast<std::size_t>(meta.integer(1, 8));
    s.stride = static_cast<std::size_t>(meta.integer(1, 4));
    s.t_max = static_cast<std::size_t>(meta.integer(0, 40));
    const std::size_t L = s.span() + static_cast<std::size_t>(meta.integer(0, 60));
    Rng rng(derive_seed(9, "trial", trial));
    const auto st = sample_clip_starts(L, s, rng);
    ASSERT_EQ(st.size(), s.rho);
    for (auto a : st) {
      EXPECT_LE(a + s.span(), L);
      for (auto b : st) EXPECT_LE(a > b ? a - b : b - a, s.t_max);
    }
  }
}

TEST(Sampler, RejectsInfeasibleClip) {
  Rng rng(0);
  EXPECT_THROW(sample_clip_starts(7, ClipSampleSpec{2, 4, 2, 0}, rng), ConfigError);
  EXPECT_THROW(sample_clip_starts(64, ClipSampleSpec{0, 4, 2, 0}, rng), ConfigError);
}

TEST(Augment, DrawFrequencies) {
  AugmentConfig cfg;
  const int n = 10000;
  int gray = 0, flip = 0, blur = 0, jitter = 0;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(1, "freq", i));
    const auto p = draw_augment_params(32, 32, cfg, rng);
    gray += p.grayscale;
    flip += p.flip;
    blur += p.blur;
    jitter += p.jitter;
    if (p.blur) {
      EXPECT_GE(p.sigma, 0.1);
      EXPECT_LE(p.sigma, 2.0);
    }
  }
  EXPECT_NEAR(gray / double(n), 0.2, 0.02);
  EXPECT_NEAR(flip / double(n), 0.5, 0.02);
  EXPECT_NEAR(blur / double(n), 0.5, 0.02);
  EXPECT_NEAR(jitter / double(n), 0.8, 0.02);
}

TEST(Augment, JitterFactorRanges) {
  AugmentConfig cfg;
  cfg.color_strength = 1.0;
  cfg.color_prob = 1.0;
  for (int i = 0; i < 2000; ++i) {
    Rng rng(derive_seed(2, "jit", i));
    const auto p = draw_augment_params(32, 32, cfg, rng);
    for (double f : {p.brightness, p.contrast, p.saturation}) {
      EXPECT_GE(f, 0.6);
      EXPECT_LE(f, 1.4);
    }
    EXPECT_LE(std::abs(p.hue), 0.1);
  }
}

AugmentConfig identity_config(std::size_t out) {
  AugmentConfig cfg;
  cfg.color_strength = 0;
  cfg.color_prob = cfg.grayscale_prob = cfg.blur_prob = cfg.flip_prob = 0;
  cfg.vgg_short_min = cfg.vgg_short_max = out;
  cfg.output_size = out;
  return cfg;
}

TEST(Augment, IdentityPipelineIsExact) {
  const auto d = gen_dataset(small_spec(2, 2));
  ClipSampleSpec spec{2, 4, 2, kUnbounded};
  for (auto groups : {std::set<AugGroup>{AugGroup::kTemporal, AugGroup::kSpatial, AugGroup::kColor},
                      std::set<AugGroup>{}}) {
    auto cfg = identity_config(16);
    cfg.groups = groups;
    const auto clip = augment_clip(d, 1, 3, spec, cfg, 42);
    const std::size_t plane = 16 * 16;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 4; ++t) {
        const float* f = d.frame(1, 3 + 2 * t);
        for (std::size_t i = 0; i < plane; ++i)
          ASSERT_EQ(clip[(c * 4 + t) * plane + i], f[c * plane + i]);
      }
  }
}

TEST(Augment, GrayscaleMakesChannelsEqual) {
  const auto d = gen_dataset(small_spec(2, 2));
  AugmentConfig cfg;
  cfg.output_size = 12;
  cfg.vgg_short_min = 12;
  cfg.vgg_short_max = 20;
  cfg.grayscale_prob = 1.0;
  const auto clip = augment_clip(d, 0, 0, ClipSampleSpec{2, 4, 2, kUnbounded}, cfg, 7);
  const std::size_t n = 4 * 12 * 12;
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(clip[i], clip[n + i]);
    EXPECT_EQ(clip[i], clip[2 * n + i]);
  }
}

TEST(Augment, VggCropStaysInsideResizedFrame) {
  for (int i = 0; i < 10000; ++i) {
    Rng rng(derive_seed(4, "vgg", i));
    const auto b = vgg_crop(256, 340, 224, 256, 320, rng);
    ASSERT_GE(b.resized_h, 256u);
    ASSERT_LE(b.resized_h, 320u);
    ASSERT_LE(b.y0 + 224, b.resized_h);
    ASSERT_LE(b.x0 + 224, b.resized_w);
    ASSERT_GE(b.top, 0.0);
    ASSERT_GE(b.left, 0.0);
    ASSERT_LE(b.top + b.height, 256.0 + 1e-9);
    ASSERT_LE(b.left + b.width, 340.0 + 1e-9);
  }
}

TEST(Augment, InceptionCropRespectsAspectAndBounds) {
  AugmentConfig cfg;
  cfg.crop_style = CropStyle::kInception;
  for (int i = 0; i < 5000; ++i) {
    Rng rng(derive_seed(6, "inc", i));
    const auto b = inception_crop(40, 56, cfg, rng);
    const double aspect = b.width / b.height;
    ASSERT_GE(aspect, 0.75 - 1e-9);
    ASSERT_LE(aspect, 4.0 / 3.0 + 1e-9);
    ASSERT_LE(b.top + b.height, 40.0 + 1e-9);
    ASSERT_LE(b.left + b.width, 56.0 + 1e-9);
  }
}

TEST(Augment, ShapeAndRangeUnderRandomDraws) {
  const auto d = gen_dataset(small_spec(4, 2));
  AugmentConfig cfg;
  cfg.output_size = 12;
  cfg.vgg_short_min = 12;
  cfg.vgg_short_max = 20;
  cfg.color_strength = 1.0;
  cfg.framerate_jitter = 0.5;
  ClipSampleSpec spec{2, 4, 2, kUnbounded};
  for (double tdiff : {0.0, 1.0}) {
    cfg.temporal_diff_prob = tdiff;
    const float lo = tdiff > 0 ? -1.f : 0.f;
    for (int i = 0; i < 200; ++i) {
      const auto clip = augment_clip(d, i % 4, static_cast<std::size_t>(i % 16), spec, cfg,
                                     derive_seed(8, "rng", i));
      ASSERT_EQ(clip.size(), 3u * 4 * 12 * 12);
      for (float v : clip) ASSERT_TRUE(v >= lo && v <= 1.f) << v;
    }
  }
}

TEST(Augment, TemporalDifferenceOfStaticClipIsZero) {
  Dataset d;
  d.num_classes = 1;
  d.length = 8;
  d.height = d.width = 8;
  SynthVideo v;
  v.frames.assign(8 * 3 * 64, 0.f);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t i = 0; i < 3 * 64; ++i) v.frames[t * 3 * 64 + i] = 0.1f * (i % 7);
  d.videos.push_back(v);
  auto cfg = identity_config(8);
  cfg.temporal_diff_prob = 1.0;
  const auto clip = augment_clip(d, 0, 0, ClipSampleSpec{2, 4, 2, kUnbounded}, cfg, 1);
  for (float x : clip) EXPECT_EQ(x, 0.f);
}

TEST(Batch, CountsAndGroups) {
  const auto d = gen_dataset(small_spec());
  AugmentConfig cfg;
  cfg.output_size = 12;
  cfg.vgg_short_min = 16;
  cfg.vgg_short_max = 20;
  const auto b = make_batch(d, 4, ClipSampleSpec{3, 4, 2, kUnbounded}, cfg, 5);
  EXPECT_EQ(b.num_clips(), 12u);
  EXPECT_EQ(b.shape(), (Shape{12, 3, 4, 12, 12}));
  const auto g = b.groups();
  ASSERT_EQ(g.size(), 4u);
  std::set<std::size_t> vids;
  for (const auto& members : g) {
    ASSERT_EQ(members.size(), 3u);
    for (auto n : members) EXPECT_EQ(b.video[n], b.video[members[0]]);
    vids.insert(b.video[members[0]]);
  }
  EXPECT_EQ(vids.size(), 4u);
}

TEST(Batch, SameSeedSameBatch) {
  const auto d = gen_dataset(small_spec());
  AugmentConfig cfg;
  cfg.output_size = 12;
  cfg.vgg_short_min = 16;
  cfg.vgg_short_max = 20;
  const auto a = make_batch(d, 6, ClipSampleSpec{2, 4, 2, kUnbounded}, cfg, 9);
  const auto b = make_batch(d, 6, ClipSampleSpec{2, 4, 2, kUnbounded}, cfg, 9);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.video, b.video);
  const auto c = make_batch(d, 6, ClipSampleSpec{2, 4, 2, kUnbounded}, cfg, 10);
  EXPECT_NE(a.data, c.data);
}

TEST(Batch, BaseCaseWithoutSpatialAndColourIsDegenerate) {
  const auto d = gen_dataset(small_spec());
  AugmentConfig cfg;
  cfg.output_size = 16;
  cfg.groups = {AugGroup::kTemporal};
  const auto b = make_batch(d, 4, ClipSampleSpec{1, 4, 2, kUnbounded}, cfg, 3);
  ASSERT_EQ(b.num_clips(), 8u);
  const auto n = b.clip_numel();
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_TRUE(std::equal(b.data.begin() + i * n, b.data.begin() + (i + 1) * n,
                           b.data.begin() + (4 + i) * n));
}

TEST(Batch, RejectsOversizedBatch) {
  const auto d = gen_dataset(small_spec(4, 2));
  EXPECT_THROW(make_batch(d, 5, ClipSampleSpec{}, AugmentConfig{}, 0), ConfigError);
}

}  // namespace
}  // namespace vidssl
