// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "vidssl/autodiff/nn_ops.hpp"
#include "vidssl/autodiff/param_set.hpp"

namespace vidssl {
namespace {

using testing::grad_check;
using testing::project;
using testing::random_values;
using TD = Tensor<double>;

TEST(Elementwise, ForwardExamples) {
  auto r = relu(TD::constant({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()),
            (std::vector<double>{0, 0, 2}));
  auto s = add(TD::constant({2}, {1, 2}), TD::constant({2}, {3, 4}));
  EXPECT_EQ(s[0], 4);
  EXPECT_EQ(s[1], 6);
}

TEST(Elementwise, SquareGradientMatchesFiniteDifference) {
  ParamSet<double> ps;
  ps.add("x", {1}, {3.0});
  auto build = [&] { return sum(mul(ps["x"], ps["x"])); };
  backward(build());
  EXPECT_NEAR(ps.grad("x")[0], 6.0, 1e-12);
  const auto fd = oracle::finite_diff<double>([&] { return build().item(); }, ps, 1e-5);
  EXPECT_NEAR(fd.at("x")[0], 6.0, 1e-8);
}

TEST(Elementwise, ShapeMismatchReportsBothShapes) {
  try {
    add(TD::zeros({2, 3}), TD::zeros({3, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[3,2]"), std::string::npos);
  }
}

TEST(Elementwise, LogStrictRejectsNonPositiveLenientPropagates) {
  auto x = TD::constant({2}, {0.0, 1.0});
  EXPECT_THROW(log(x, Strictness::kStrict), NumericError);
  auto y = log(x);
  EXPECT_TRUE(std::isinf(y[0]) && y[0] < 0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(Elementwise, BroadcastMatchesExplicitTile) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng.integer(1, 5), cols = 1 + rng.integer(1, 6);
    auto a = TD::constant({rows, cols}, random_values(rows * cols, rng));
    auto row = random_values(cols, rng);
    std::vector<double> tiled;
    for (std::size_t r = 0; r < rows; ++r) tiled.insert(tiled.end(), row.begin(), row.end());
    auto b = TD::constant({1, cols}, row);
    auto bt = TD::constant({rows, cols}, tiled);
    for (auto kind : {Elementwise::kAdd, Elementwise::kMul, Elementwise::kSub}) {
      auto x = elementwise(a, &b, kind);
      auto y = elementwise(a, &bt, kind);
      for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x[i], y[i], 1e-7);
    }
    // Rank-extended form [cols] broadcasts the same way.
    auto c = add(TD::constant({cols}, row), a);
    for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(c[i], a[i] + row[i % cols], 1e-7);
  }
}

TEST(Elementwise, GradientsAgreeWithFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet<double> ps;
    ps.add("a", {3, 4}, random_values(12, rng, 0.2, 2.0));
    ps.add("b", {1, 4}, random_values(4, rng, 0.2, 2.0));
    auto build = [&] {
      auto x = mul(add(ps["a"], ps["b"]), sub(ps["a"], ps["b"]));
      x = add(relu(x), exp(scale(ps["a"], 0.3)));
      x = sub(log(add(ps["a"], ps["a"])), neg(x));
      return project(x);
    };
    EXPECT_LT(grad_check(ps, build).max_rel, 1e-4);
  }
}

TEST(Matmul, IdentityAndHandArithmetic) {
  auto x = TD::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto y = matmul(TD::constant({2, 2}, {1, 0, 0, 1}), x);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y[i], x[i]);
  EXPECT_EQ(matmul(TD::constant({1, 2}, {1, 2}), TD::constant({2, 1}, {3, 4})).item(), 11);
  EXPECT_THROW(matmul(TD::zeros({2, 3}), TD::zeros({2, 3})), ShapeError);
}

TEST(Matmul, GradientCheck) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet<double> ps;
    ps.add("a", {3, 4}, random_values(12, rng));
    ps.add("b", {4, 2}, random_values(8, rng));
    EXPECT_LT(grad_check(ps, [&] { return project(matmul(ps["a"], ps["b"])); }).max_rel, 1e-5);
  }
}

TEST(Conv3d, PointwiseIdentityKernelCopiesInput) {
  Rng rng(1);
  auto x = TD::constant({2, 3, 2, 4, 4}, random_values(2 * 3 * 32, rng));
  std::vector<double> w(9, 0.0);
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  auto y = conv3d(x, TD::constant({3, 3, 1, 1, 1}, w), {1, 1, 1}, {0, 0, 0});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv3d, OnesKernelOnConstantFrameMatchesDirectSum) {
  auto x = TD::constant({1, 1, 1, 5, 5}, std::vector<double>(25, 1.0));
  auto y = conv3d(x, TD::constant({1, 1, 1, 3, 3}, std::vector<double>(9, 1.0)), {1, 1, 1},
                  {0, 1, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 5, 5}));
  // Direct summation: count in-bounds neighbours of each output pixel.
  for (int h = 0; h < 5; ++h)
    for (int w = 0; w < 5; ++w) {
      int count = 0;
      for (int dh = -1; dh <= 1; ++dh)
        for (int dw = -1; dw <= 1; ++dw)
          count += (h + dh >= 0 && h + dh < 5 && w + dw >= 0 && w + dw < 5);
      EXPECT_EQ(y[h * 5 + w], count);
    }
  EXPECT_EQ(y[2 * 5 + 2], 9);
  EXPECT_EQ(y[0], 4);
}

TEST(Conv3d, RejectsOversizedKernelAndChannelMismatch) {
  EXPECT_THROW(conv3d(TD::zeros({1, 1, 1, 2, 2}), TD::zeros({1, 1, 1, 3, 3}), {1, 1, 1}, {0, 0, 0}),
               ShapeError);
  EXPECT_THROW(conv3d(TD::zeros({1, 2, 1, 4, 4}), TD::zeros({1, 3, 1, 1, 1}), {1, 1, 1}, {0, 0, 0}),
               ShapeError);
}

TEST(Conv3d, GradientCheck) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet<double> ps;
    ps.add("x", {2, 2, 4, 5, 5}, random_values(2 * 2 * 4 * 25, rng));
    ps.add("w", {3, 2, 3, 3, 3}, random_values(3 * 2 * 27, rng));
    const std::size_t s = trial % 2 ? 2 : 1;
    auto build = [&] { return project(conv3d(ps["x"], ps["w"], {1, s, s}, {1, 1, 1})); };
    EXPECT_LT(grad_check(ps, build).max_rel, 1e-4);
  }
}

TEST(MaxPool3d, GradientCheck) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet<double> ps;
    ps.add("x", {2, 2, 2, 6, 6}, random_values(2 * 2 * 2 * 36, rng));
    auto build = [&] { return project(max_pool3d(ps["x"], {1, 3, 3}, {1, 2, 2}, {0, 1, 1})); };
    EXPECT_LT(grad_check(ps, build).max_rel, 1e-4);
  }
}

TEST(BatchNorm, TrainModeNormalizesPerChannel) {
  Rng rng(2);
  auto x = TD::constant({8, 3, 2, 2, 2}, random_values(8 * 3 * 8, rng, -3, 5));
  RunningStats<double> stats;
  auto y = batchnorm(x, TD::constant({3}, {1, 1, 1}), TD::zeros({3}), stats, Mode::kTrain,
                     {0.1, 0.0, 1});
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    int n = 0;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t i = 0; i < 8; ++i, ++n) m += y[(b * 3 + c) * 8 + i];
    m /= n;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t i = 0; i < 8; ++i) v += std::pow(y[(b * 3 + c) * 8 + i] - m, 2);
    v /= n;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
  // Running stats moved toward the batch statistics.
  EXPECT_NE(stats.mean[0], 0.0);
}

TEST(BatchNorm, EvalWithIdentityStatsIsIdentity) {
  Rng rng(6);
  auto x = TD::constant({4, 5}, random_values(20, rng));
  auto stats = RunningStats<double>::identity(5);
  auto y = batchnorm(x, TD::constant({5}, std::vector<double>(5, 1.0)), TD::zeros({5}), stats,
                     Mode::kEval, {0.1, 0.0, 1});
  for (std::size_t i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
  EXPECT_EQ(stats.mean, std::vector<double>(5, 0.0));
}

TEST(BatchNorm, SingleElementTrainBatchRejected) {
  RunningStats<double> stats;
  EXPECT_THROW(batchnorm(TD::zeros({1, 4}), TD::zeros({4}), TD::zeros({4}), stats, Mode::kTrain),
               NumericError);
  EXPECT_THROW(batchnorm(TD::zeros({2, 4}), TD::zeros({3}), TD::zeros({4}), stats, Mode::kTrain),
               ShapeError);
}

TEST(BatchNorm, GradientCheckTrainEvalAndGroups) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet<double> ps;
    ps.add("x", {8, 4}, random_values(32, rng, -2, 2));
    ps.add("g", {4}, random_values(4, rng, 0.5, 1.5));
    ps.add("b", {4}, random_values(4, rng));
    RunningStats<double> stats = RunningStats<double>::identity(4);
    const Mode mode = trial % 3 == 2 ? Mode::kEval : Mode::kTrain;
    const std::size_t groups = trial % 3 == 1 ? 2 : 1;
    auto build = [&] {
      return project(batchnorm(ps["x"], ps["g"], ps["b"], stats, mode, {0.1, 1e-5, groups}));
    };
    EXPECT_LT(grad_check(ps, build).max_rel, 1e-4) << "trial " << trial;
  }
}

TEST(L2Normalize, ExamplesAndStrictMode) {
  auto y = l2_normalize(TD::constant({1, 2}, {3, 4}), 1);
  // The 1e-12 guard inside the sqrt perturbs results at the 1e-12 level.
  EXPECT_NEAR(y[0], 0.6, 1e-12);
  EXPECT_NEAR(y[1], 0.8, 1e-12);
  auto z = l2_normalize(y, 1);
  EXPECT_NEAR(z[0], 0.6, 1e-12);
  EXPECT_NEAR(z[1], 0.8, 1e-12);
  auto exact = l2_normalize(TD::constant({1, 2}, {3, 4}), 1, Strictness::kStrict);
  EXPECT_DOUBLE_EQ(exact[0], 0.6);
  EXPECT_DOUBLE_EQ(exact[1], 0.8);
  EXPECT_THROW(l2_normalize(TD::zeros({2, 3}), 1, Strictness::kStrict), NumericError);
  auto guarded = l2_normalize(TD::zeros({2, 3}), 1);
  for (double v : guarded.values()) EXPECT_EQ(v, 0.0);
}

TEST(L2Normalize, GradientCheck) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet<double> ps;
    ps.add("x", {4, 8}, random_values(32, rng));
    EXPECT_LT(grad_check(ps, [&] { return project(l2_normalize(ps["x"], trial % 2)); }).max_rel,
              1e-4);
  }
}

TEST(GlobalAvgPool, ConstantUniformGradientAndOracle) {
  auto c = global_avg_pool(TD::constant({2, 3, 2, 2, 2}, std::vector<double>(48, 2.5)));
  for (double v : c.values()) EXPECT_EQ(v, 2.5);

  ParamSet<double> ps;
  Rng rng(3);
  ps.add("x", {2, 3, 2, 3, 4}, random_values(144, rng));
  backward(sum(global_avg_pool(ps["x"])));
  for (double g : ps.grad("x")) EXPECT_DOUBLE_EQ(g, 1.0 / 24.0);

  auto y = global_avg_pool(ps["x"]);
  for (std::size_t bc = 0; bc < 6; ++bc) {
    double s = 0;
    for (std::size_t i = 0; i < 24; ++i) s += ps["x"][bc * 24 + i];
    EXPECT_NEAR(y[bc], s / 24.0, 1e-7);
  }
}

TEST(LossPrimitives, GradientCheck) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet<double> ps;
    ps.add("x", {3, 5}, random_values(15, rng, -3, 3));
    std::vector<std::uint8_t> mask(15);
    for (std::size_t i = 0; i < 15; ++i) mask[i] = (i % 5 == 0) || rng.bernoulli(0.5);
    auto build = [&] {
      return add(project(log_softmax_rows(ps["x"])), project(masked_row_logsumexp(ps["x"], mask), 3));
    };
    EXPECT_LT(grad_check(ps, build).max_rel, 1e-4);
  }
}

TEST(StopGradient, BlocksUpstreamContribution) {
  ParamSet<double> ps;
  ps.add("x", {1}, {3.0});
  backward(sum(mul(ps["x"], stop_gradient(ps["x"]))));
  EXPECT_EQ(ps.grad("x")[0], 3.0);

  ps.zero_grad();
  auto stopped = stop_gradient(scale(ps["x"], 2.0));
  EXPECT_FALSE(stopped.requires_grad());
  // A loss built only from a stopped branch has nothing to differentiate.
  EXPECT_THROW(backward(sum(stopped)), ShapeError);
  backward(add(sum(stopped), scale(sum(ps["x"]), 0.0)));
  EXPECT_EQ(ps.grad("x")[0], 0.0);
}

TEST(Backward, SumAccumulationAndErrors) {
  ParamSet<double> ps;
  ps.add("theta", {2, 3}, {1, 2, 3, 4, 5, 6});
  auto loss = sum(ps["theta"]);
  backward(loss);
  for (double g : ps.grad("theta")) EXPECT_EQ(g, 1.0);
  backward(loss);
  for (double g : ps.grad("theta")) EXPECT_EQ(g, 2.0);
  ps.zero_grad();
  for (double g : ps.grad("theta")) EXPECT_EQ(g, 0.0);
  EXPECT_THROW(backward(scale(ps["theta"], 2.0)), ShapeError);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  ParamSet<double> ps;
  ps.add("x", {1}, {2.0});
  auto y = mul(ps["x"], ps["x"]);     // x^2
  auto z = add(y, mul(y, ps["x"]));   // x^2 + x^3
  backward(sum(z));
  EXPECT_DOUBLE_EQ(ps.grad("x")[0], 2 * 2.0 + 3 * 4.0);
}

TEST(Backward, TwoLayerNetworkMatchesFiniteDifferences) {
  Rng rng(21);
  ParamSet<double> ps;
  ps.add("w1", {6, 5}, random_values(30, rng));
  ps.add("b1", {1, 5}, random_values(5, rng));
  ps.add("w2", {5, 3}, random_values(15, rng));
  auto x = TD::constant({4, 6}, random_values(24, rng));
  auto build = [&] {
    auto h = relu(add(matmul(x, ps["w1"]), ps["b1"]));
    return mean(log_softmax_rows(matmul(h, ps["w2"])));
  };
  EXPECT_LT(grad_check(ps, build).max_rel, 1e-4);
}

TEST(Determinism, IdenticalInputsGiveBitwiseIdenticalOutputs) {
  Rng rng(30);
  auto x = TD::constant({2, 3, 2, 6, 6}, random_values(2 * 3 * 72, rng));
  auto w = TD::constant({4, 3, 1, 3, 3}, random_values(4 * 27, rng));
  auto a = conv3d(x, w, {1, 2, 2}, {0, 1, 1});
  auto b = conv3d(x, w, {1, 2, 2}, {0, 1, 1});
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(ParamSet, NamesUniqueOrderedAndGradShapes) {
  ParamSet<float> ps;
  ps.add("zeta", {2}, {1, 2});
  ps.add("alpha", {3, 2}, std::vector<float>(6, 0.f));
  EXPECT_THROW(ps.add("alpha", {1}, {0.f}), ConfigError);
  std::vector<std::string> names;
  for (const auto& [n, e] : ps) {
    names.push_back(n);
    EXPECT_EQ(e.tensor.grad().size(), e.tensor.numel());
  }
  EXPECT_EQ(names, (std::vector<std::string>{"alpha", "zeta"}));
}

}  // namespace
}  // namespace vidssl
