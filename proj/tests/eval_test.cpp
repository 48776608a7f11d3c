// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vidssl/eval.hpp"
#include "vidssl/ssl/framework.hpp"

namespace vidssl {
namespace {

const Dataset& small_data() {
  static const Dataset d = [] {
    DatasetSpec s;
    s.num_videos = 40;
    s.num_classes = 4;
    s.length = 24;
    s.seed = 5;
    return gen_dataset(s);
  }();
  return d;
}

FeatureSet features_from(const std::vector<std::vector<double>>& rows, const std::vector<std::uint32_t>& labels,
                         std::size_t C) {
  FeatureSet fs;
  fs.dim = rows.front().size();
  fs.views = 1;
  fs.num_classes = C;
  for (const auto& r : rows) fs.x.insert(fs.x.end(), r.begin(), r.end());
  fs.labels = labels;
  return fs;
}

TEST(Features, ShapeDeterminismAndDuplicates) {
  Encoder enc(EncoderConfig{});
  ParamSet<float> p;
  BufferSet<float> b;
  enc.init(p, b, 1);
  const ClipSampleSpec spec{1, 4, 2, kUnbounded};
  const auto fs = extract_features(enc, p, b, small_data(), spec, 3, {2, 2, 7});
  EXPECT_EQ(fs.dim, 64u);
  EXPECT_EQ(fs.x.size(), 3u * 3 * 64);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(fs.row(0, j)[i], fs.row(1, j)[i]);
  const auto again = extract_features(enc, p, b, small_data(), spec, 3, {2, 2, 7});
  EXPECT_EQ(fs.x, again.x);
}

TEST(Features, ZeroStepPretrainingMatchesFreshEncoder) {
  auto c = FrameworkConfig::defaults(Method::kSimCLR);
  FrameworkState<float> st(c, 10, 3);
  Encoder enc(c.encoder);
  ParamSet<float> p;
  BufferSet<float> b;
  enc.init(p, b, derive_seed(3, "init.encoder"));
  const ClipSampleSpec spec{1, 4, 2, kUnbounded};
  EXPECT_EQ(extract_features(st.encoder, st.online, st.online_buffers, small_data(), spec, 2).x,
            extract_features(enc, p, b, small_data(), spec, 2).x);
}

TEST(Features, UniformStartsSpanTheVideo) {
  const ClipSampleSpec spec{1, 4, 2, kUnbounded};
  EXPECT_EQ(uniform_starts(24, spec, 3), (std::vector<std::size_t>{0, 8, 16}));
  EXPECT_EQ(uniform_starts(24, spec, 1), (std::vector<std::size_t>{8}));
  EXPECT_THROW(uniform_starts(5, spec, 3), ConfigError);
}

TEST(Split, StratifiedAndDisjoint) {
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 50; ++i) labels.push_back(static_cast<std::uint32_t>(i % 5));
  std::vector<std::size_t> tr, te;
  stratified_split(labels, 5, 0.8, 1, tr, te);
  EXPECT_EQ(tr.size(), 40u);
  EXPECT_EQ(te.size(), 10u);
  std::vector<int> per(5, 0);
  for (auto v : te) per[labels[v]]++;
  for (int n : per) EXPECT_EQ(n, 2);
  std::vector<std::size_t> all = tr;
  all.insert(all.end(), te.begin(), te.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
  EXPECT_THROW(stratified_split(std::vector<std::uint32_t>(10, 2), 5, 0.8, 1, tr, te), DataError);
}

TEST(Probe, OneHotFeaturesAreSeparable) {
  std::vector<std::vector<double>> rows;
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 80; ++i) {
    std::vector<double> r(4, 0.0);
    r[i % 4] = 1.0;
    rows.push_back(r);
    labels.push_back(static_cast<std::uint32_t>(i % 4));
  }
  const auto res = linear_probe(features_from(rows, labels, 4), ProbeConfig{}, 1);
  EXPECT_EQ(res.accuracy, 1.0);
}

TEST(Probe, RandomFeaturesAtChance) {
  double mean = 0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    std::vector<std::vector<double>> rows;
    std::vector<std::uint32_t> labels;
    for (int i = 0; i < 400; ++i) {
      rows.push_back(testing::random_values(16, rng));
      labels.push_back(static_cast<std::uint32_t>(i % 4));
    }
    mean += linear_probe(features_from(rows, labels, 4), ProbeConfig{}, s).accuracy / seeds;
  }
  EXPECT_NEAR(mean, 0.25, 0.05);
}

// Normal-equations least-squares classifier on the same split.
double least_squares_accuracy(const FeatureSet& fs, std::uint64_t seed) {
  std::vector<std::size_t> tr, te;
  stratified_split(fs.labels, fs.num_classes, 0.8, seed, tr, te);
  const std::size_t D = fs.dim + 1, C = fs.num_classes;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(D, D), R = Eigen::MatrixXd::Zero(D, C);
  for (auto v : tr) {
    Eigen::VectorXd x(D);
    for (std::size_t j = 0; j < fs.dim; ++j) x[j] = fs.row(v, 0)[j];
    x[fs.dim] = 1;
    A += x * x.transpose();
    R.col(fs.labels[v]) += x;
  }
  const Eigen::MatrixXd W = A.ldlt().solve(R);
  std::size_t ok = 0;
  for (auto v : te) {
    Eigen::VectorXd x(D);
    for (std::size_t j = 0; j < fs.dim; ++j) x[j] = fs.row(v, 0)[j];
    x[fs.dim] = 1;
    Eigen::Index k;
    (W.transpose() * x).maxCoeff(&k);
    ok += static_cast<std::size_t>(k) == fs.labels[v];
  }
  return static_cast<double>(ok) / static_cast<double>(te.size());
}

TEST(Probe, SeparableBlobsMatchLeastSquares) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    const double cx[3] = {0, 6, 0}, cy[3] = {0, 0, 6};
    std::vector<std::vector<double>> rows;
    std::vector<std::uint32_t> labels;
    for (int i = 0; i < 150; ++i) {
      const int c = i % 3;
      rows.push_back({cx[c] + 0.5 * rng.normal(), cy[c] + 0.5 * rng.normal()});
      labels.push_back(static_cast<std::uint32_t>(c));
    }
    const auto fs = features_from(rows, labels, 3);
    EXPECT_NEAR(linear_probe(fs, ProbeConfig{}, seed).accuracy, least_squares_accuracy(fs, seed), 0.02);
  }
}

TEST(Probe, ConfusionRowsAndPermutationInvariance) {
  Rng rng(9);
  std::vector<std::vector<double>> rows, perm;
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 120; ++i) {
    const int c = i % 3;
    std::vector<double> r{c + 0.8 * rng.normal(), rng.normal(), 0.5 * c + rng.normal()};
    rows.push_back(r);
    perm.push_back({r[2], r[0], r[1]});
    labels.push_back(static_cast<std::uint32_t>(c));
  }
  const auto a = linear_probe(features_from(rows, labels, 3), ProbeConfig{}, 4);
  const auto b = linear_probe(features_from(perm, labels, 3), ProbeConfig{}, 4);
  EXPECT_NEAR(a.accuracy, b.accuracy, 1e-12);
  EXPECT_GE(a.accuracy, 0.0);
  EXPECT_LE(a.accuracy, 1.0);
  std::vector<std::size_t> tr, te;
  stratified_split(labels, 3, 0.8, 4, tr, te);
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t row = 0, expect = 0;
    for (std::size_t k = 0; k < 3; ++k) row += a.confusion[c * 3 + k];
    for (auto v : te) expect += labels[v] == c;
    EXPECT_EQ(row, expect);
  }
}

TEST(Probe, RejectsSingleClassAndNonZeroDecay) {
  std::vector<std::vector<double>> rows(10, std::vector<double>{1.0, 2.0});
  EXPECT_THROW(linear_probe(features_from(rows, std::vector<std::uint32_t>(10, 1), 3), ProbeConfig{}, 0), DataError);
  ProbeConfig c;
  c.weight_decay = 1e-4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Probe, LeavesEncoderUntouchedAndRepeats) {
  Encoder enc(EncoderConfig{});
  ParamSet<float> p;
  BufferSet<float> b;
  enc.init(p, b, 2);
  const auto before = p.clone();
  const auto stats = b;
  const ClipSampleSpec spec{1, 4, 2, kUnbounded};
  const auto fs = extract_features(enc, p, b, small_data(), spec, 3);
  const auto r1 = linear_probe(fs, ProbeConfig{}, 7), r2 = linear_probe(fs, ProbeConfig{}, 7);
  EXPECT_EQ(r1.accuracy, r2.accuracy);
  for (const auto& [n, e] : p) {
    const auto x = e.tensor.values(), y = before[n].values();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << n;
  }
  for (const auto& [n, s] : b) EXPECT_EQ(s.mean, stats.at(n).mean) << n;
}

TEST(Finetune, ZeroStepsIsFreshHeadAndCallerUntouched) {
  Encoder enc(EncoderConfig{});
  ParamSet<float> p;
  BufferSet<float> b;
  enc.init(p, b, 4);
  const auto before = p.clone();
  FinetuneConfig cfg;
  cfg.steps = 0;
  const ClipSampleSpec spec{1, 4, 2, kUnbounded};
  const auto r0 = finetune(enc, p, b, small_data(), spec, cfg, 1);
  EXPECT_EQ(r0.accuracy, finetune(enc, p, b, small_data(), spec, cfg, 1).accuracy);
  EXPECT_LE(r0.accuracy, 0.6);
  cfg.steps = 3;
  cfg.batch_size = 4;
  finetune(enc, p, b, small_data(), spec, cfg, 1);
  for (const auto& [n, e] : p) {
    const auto x = e.tensor.values(), y = before[n].values();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << n;
  }
}

}  // namespace
}  // namespace vidssl
