// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "vidssl/optim.hpp"

namespace vidssl {
namespace {

void set_grad(ParamSet<double>& ps, const std::string& n, std::vector<double> g) {
  auto& buf = ps[n].node()->grad_buffer();
  std::copy(g.begin(), g.end(), buf.begin());
}

TEST(LrSchedule, Endpoints) {
  OptimConfig c;
  c.base_lr = 4.8;
  c.total_iters = 100;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 4.8);
  EXPECT_NEAR(lr_at(100, c), 0.0, 1e-15);
  EXPECT_NEAR(lr_at(50, c), 2.4, 1e-12);
  double prev = 1e9;
  for (std::size_t n = 0; n <= 100; ++n) {
    EXPECT_LE(lr_at(n, c), prev);
    prev = lr_at(n, c);
  }
}

TEST(LrSchedule, WarmupRamp) {
  OptimConfig c;
  c.total_iters = 100;
  c.warmup_iters = 10;
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_NEAR(lr_at(5, c), 0.5 * 0.4 * 0.5 * (std::cos(0.05 * std::numbers::pi) + 1), 1e-15);
  c.warmup_iters = 200;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Lars, LocalRateExamples) {
  const std::vector<double> p{3, 4}, g{0, 1};
  EXPECT_NEAR(lars_local_lr<double>(p, g, 0.001, 0.0), 0.005, 1e-15);
  EXPECT_NEAR(lars_local_lr<double>(p, g, 0.001, 0.1), 0.001 * 5 / 1.5, 1e-15);
  EXPECT_EQ(lars_local_lr<double>(p, g, 0.001, 0.1, true), 1.0);
  EXPECT_EQ(lars_local_lr<double>(std::vector<double>{0, 0}, g, 0.001, 0.0), 1.0);
  EXPECT_EQ(lars_local_lr<double>(p, std::vector<double>{0, 0}, 0.001, 0.0), 1.0);
}

TEST(Sgd, MomentumRecurrence) {
  ParamSet<double> ps;
  ps.add("w", {1}, {0.0});
  OptimConfig c;
  c.base_lr = 1.0;
  c.weight_decay = 0;
  c.total_iters = 1000000;
  set_grad(ps, "w", {1.0});
  sgd_step(ps, c, 0);
  EXPECT_NEAR(ps["w"][0], -1.0, 1e-12);
  set_grad(ps, "w", {1.0});
  sgd_step(ps, c, 0);
  EXPECT_NEAR(ps["w"][0], -2.9, 1e-12);
  EXPECT_EQ(ps.grad("w")[0], 0.0);
}

TEST(Sgd, WeightDecayFoldsIntoGradient) {
  ParamSet<double> ps;
  ps.add("w", {1}, {2.0});
  ps.add("b", {1}, {2.0}, /*no_decay=*/true);
  OptimConfig c;
  c.base_lr = 0.5;
  c.momentum = 0;
  c.weight_decay = 0.1;
  sgd_step(ps, c, 0);
  EXPECT_NEAR(ps["w"][0], 2.0 - 0.5 * 0.2, 1e-15);
  EXPECT_EQ(ps["b"][0], 2.0);
}

TEST(Sgd, ConvergesOnQuadraticBowl) {
  for (bool lars : {false, true}) {
    ParamSet<double> ps;
    ps.add("w", {3}, {1.0, -2.0, 0.5});
    OptimConfig c;
    c.base_lr = lars ? 2.0 : 0.1;
    c.weight_decay = 0;
    c.use_lars = lars;
    if (lars) c.momentum = 0;
    c.lars_trust = 0.01;
    c.total_iters = 2000;
    for (std::size_t n = 0; n < 2000; ++n) {
      std::vector<double> g(3);
      for (int i = 0; i < 3; ++i) g[i] = 2 * (ps["w"][i] - 0.25 * i);
      set_grad(ps, "w", g);
      sgd_step(ps, c, n);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(ps["w"][i], 0.25 * i, 1e-3) << "lars=" << lars;
  }
}

TEST(Sgd, ScalarBowlMatchesDirectSimulation) {
  ParamSet<double> ps;
  ps.add("x", {1}, {1.0});
  OptimConfig c;
  c.base_lr = 0.1;
  c.weight_decay = 0;
  c.total_iters = 200;
  double x = 1, v = 0;
  for (std::size_t n = 0; n < 200; ++n) {
    set_grad(ps, "x", {2 * ps["x"][0]});
    sgd_step(ps, c, n);
    v = 0.9 * v + 2 * x;
    x -= 0.1 * 0.5 * (1 + std::cos(std::numbers::pi * n / 200.0)) * v;
    EXPECT_NEAR(ps["x"][0], x, 1e-14);
  }
  EXPECT_LT(std::abs(ps["x"][0]), 1e-4);
}

TEST(Sgd, NonFiniteGradientNamesParameterAndLeavesWeights) {
  ParamSet<double> ps;
  ps.add("a", {1}, {1.0});
  ps.add("enc.s3.b0.conv_b", {2}, {1.0, 1.0});
  set_grad(ps, "a", {0.5});
  set_grad(ps, "enc.s3.b0.conv_b", {0.0, NAN});
  OptimConfig c;
  try {
    sgd_step(ps, c, 0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.s3.b0.conv_b"), std::string::npos);
  }
  EXPECT_EQ(ps["a"][0], 1.0);
}

TEST(Sgd, LarsExemptParametersMatchPlainSgd) {
  ParamSet<double> a, b;
  a.add("bn.scale", {2}, {1.0, 0.5}, true, true);
  b.add("bn.scale", {2}, {1.0, 0.5}, true, true);
  OptimConfig ca, cb;
  ca.use_lars = true;
  cb.use_lars = false;
  for (int k = 0; k < 3; ++k) {
    set_grad(a, "bn.scale", {0.3, -0.2});
    set_grad(b, "bn.scale", {0.3, -0.2});
    sgd_step(a, ca, k);
    sgd_step(b, cb, k);
  }
  EXPECT_EQ(a["bn.scale"][0], b["bn.scale"][0]);
  EXPECT_EQ(a["bn.scale"][1], b["bn.scale"][1]);
}

TEST(Sgd, TrustCoefficientIgnoredWithoutLars) {
  ParamSet<double> a, b;
  a.add("w", {2}, {1.0, 2.0});
  b.add("w", {2}, {1.0, 2.0});
  OptimConfig ca, cb;
  ca.lars_trust = 0.5;
  cb.lars_trust = 1e-6;
  set_grad(a, "w", {0.1, 0.2});
  set_grad(b, "w", {0.1, 0.2});
  sgd_step(a, ca, 0);
  sgd_step(b, cb, 0);
  EXPECT_EQ(a["w"][0], b["w"][0]);
  EXPECT_EQ(a["w"][1], b["w"][1]);
}

}  // namespace
}  // namespace vidssl
