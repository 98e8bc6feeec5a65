#include <gtest/gtest.h>

#include <cmath>

#include "divseg/gradcheck.hpp"
#include "divseg/nn.hpp"
#include "support/oracles.hpp"

using namespace divseg;

namespace {

PoolingTrace pool(PoolingMode mode, std::vector<double> fg, std::vector<double> bg) {
  return pool_scores<double>(mode, fg, bg);
}

}  // namespace

TEST(Linear, IdentityWeightsPassThrough) {
  Linear<float> layer(3, 3);
  for (size_t i = 0; i < 3; ++i) layer.weight[i * 3 + i] = 1.0f;
  Grid x(2, 2, 3);
  for (size_t i = 0; i < x.size(); ++i) x.values()[i] = static_cast<float>(i) - 4.0f;
  EXPECT_EQ(linear_forward(layer, x), x);
}

TEST(Linear, ScalarHandArithmetic) {
  Linear<float> layer(1, 1);
  layer.weight = {2.0f};
  layer.bias = {1.0f};
  const Grid y = linear_forward(layer, Grid(3, 2, 1, 3.0f));
  EXPECT_EQ(y.height(), 3u);
  EXPECT_EQ(y.width(), 2u);
  for (float v : y.values()) EXPECT_EQ(v, 7.0f);
}

TEST(Linear, SingleLocationIsMatVec) {
  Linear<float> layer(2, 3);
  layer.weight = {1, 2, 3, 4, 5, 6};
  layer.bias = {0.5f, 0, -1};
  const Grid y = linear_forward(layer, Grid(1, 1, 2, std::vector<float>{1, -1}));
  EXPECT_EQ(y.depth(), 3u);
  EXPECT_FLOAT_EQ(y(0, 0), -0.5f);
  EXPECT_FLOAT_EQ(y(0, 1), -1.0f);
  EXPECT_FLOAT_EQ(y(0, 2), -2.0f);
}

TEST(Linear, DepthMismatchThrows) {
  Linear<float> layer(2, 3);
  EXPECT_THROW(linear_forward(layer, Grid(1, 1, 4)), ShapeError);
}

TEST(Pooling, PixelExamples) {
  EXPECT_EQ(pool(PoolingMode::kPerPixel, {0.3, -1.0}, {0.3, -1.0}).prob, 0.5);
  EXPECT_NEAR(pool(PoolingMode::kPerPixel, {1.0, 0.0}, {0.0, 1.0}).prob, 0.731059, 1e-6);
  EXPECT_NEAR(pool(PoolingMode::kPerPixel, {-3.0, 0.0}, {0.0, 0.0}).prob, 0.5, 1e-12);
}

TEST(Pooling, GlobalExamples) {
  EXPECT_EQ(pool(PoolingMode::kGlobal, {1.0, 2.0}, {2.0, 0.0}).prob, 0.5);
  EXPECT_NEAR(pool(PoolingMode::kGlobal, {2.0, -1.0}, {0.0, -5.0}).prob, 0.880797, 1e-6);
  const PoolingTrace t = pool(PoolingMode::kGlobal, {1, 3, 0, 1}, {2, 2, 2, 2});
  EXPECT_NEAR(t.prob, std::exp(3.0) / (std::exp(3.0) + std::exp(2.0)), 1e-12);
  EXPECT_EQ(t.fg_loc, 1u);
  EXPECT_EQ(t.bg_loc, 0u);
}

TEST(Pooling, SingleLocationModesAgree) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double s = rng.normal() * 5, sb = rng.normal() * 5;
    EXPECT_NEAR(pool(PoolingMode::kPerPixel, {s}, {sb}).prob,
                pool(PoolingMode::kGlobal, {s}, {sb}).prob, 1e-12);
  }
}

TEST(Pooling, ShiftInvariant) {
  Rng rng(2);
  for (PoolingMode mode : {PoolingMode::kPerPixel, PoolingMode::kGlobal}) {
    std::vector<double> fg(6), bg(6);
    for (size_t i = 0; i < 6; ++i) {
      fg[i] = rng.normal();
      bg[i] = rng.normal();
    }
    const double base = pool(mode, fg, bg).prob;
    for (double& v : fg) v += 3.25;
    for (double& v : bg) v += 3.25;
    EXPECT_NEAR(pool(mode, fg, bg).prob, base, 1e-9);
  }
}

TEST(Pooling, EmptyOrMismatchedThrows) {
  EXPECT_THROW(pool(PoolingMode::kGlobal, {}, {}), ShapeError);
  EXPECT_THROW(pool(PoolingMode::kPerPixel, {1.0}, {1.0, 2.0}), ShapeError);
}

TEST(Bce, UniformCase) {
  EXPECT_NEAR(bce_loss(0.5, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(0.5, 1), std::log(2.0), 1e-12);
}

TEST(Bce, DirectEvaluation) {
  EXPECT_NEAR(bce_loss(0.880797, 1), 0.126928, 1e-6);
  const PooledLoss l = bce_loss_and_grad(pool(PoolingMode::kGlobal, {2.0}, {0.0}), 1);
  EXPECT_NEAR(l.loss, 0.126928, 1e-6);
}

TEST(Bce, ClampedAtExtremes) {
  const PooledLoss l = bce_loss_and_grad(pool(PoolingMode::kGlobal, {-100.0}, {0.0}), 1);
  EXPECT_TRUE(l.clamped);
  EXPECT_NEAR(l.loss, -std::log(kProbClamp), 1e-6);
  EXPECT_TRUE(std::isfinite(l.d_fg));
}

TEST(Bce, GradientOnlyAtPooledLocations) {
  const PoolingTrace t = pool(PoolingMode::kGlobal, {0.1, 0.7, 0.2}, {0.5, 0.1, 0.3});
  const PooledLoss l = bce_loss_and_grad(t, 1);
  EXPECT_EQ(l.fg_loc, 1u);
  EXPECT_EQ(l.bg_loc, 0u);
  EXPECT_NEAR(l.d_fg, t.prob - 1.0, 1e-12);
  EXPECT_NEAR(l.d_bg, 1.0 - t.prob, 1e-12);
}

TEST(MaskedCe, EmptyLabelSet) {
  const LossValue v = masked_ce_loss_and_grad(BasicGrid<double>(2, 2, 3, 1.0), {});
  EXPECT_EQ(v.loss, 0.0);
  for (double g : v.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(MaskedCe, UniformLogitsOverTwentyOneClasses) {
  const std::vector<PointLabel> labels = {{0, 4}};
  const LossValue v = masked_ce_loss_and_grad(BasicGrid<double>(1, 2, 21, 0.3), labels);
  EXPECT_NEAR(v.loss, 3.044522, 1e-6);
}

TEST(MaskedCe, DuplicatedLabelsKeepTheMean) {
  Rng rng(4);
  BasicGrid<double> z(3, 3, 4);
  for (double& v : z.values()) v = rng.normal();
  std::vector<PointLabel> labels = {{0, 1}, {4, 3}, {8, 0}};
  const double once = masked_ce_loss_and_grad(z, labels).loss;
  labels.insert(labels.end(), labels.begin(), labels.end());
  EXPECT_NEAR(masked_ce_loss_and_grad(z, labels).loss, once, 1e-12);
}

TEST(MaskedCe, UnlabeledGradientIsBitwiseZero) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    BasicGrid<double> z(4, 5, 3);
    for (double& v : z.values()) v = rng.normal() * 10;
    std::vector<PointLabel> labels;
    std::vector<bool> labeled(z.locations(), false);
    for (size_t i = 0; i < z.locations(); ++i) {
      if (rng.uniform() < 0.3) {
        labels.push_back({i, rng.below(3)});
        labeled[i] = true;
      }
    }
    const LossValue v = masked_ce_loss_and_grad(z, labels);
    for (size_t i = 0; i < z.locations(); ++i) {
      if (labeled[i]) continue;
      for (double g : v.grad.at(i)) EXPECT_EQ(std::signbit(g) ? -g : g, 0.0);
    }
  }
}

TEST(MaskedCe, OutOfRangeLabelsThrow) {
  const std::vector<PointLabel> bad_loc = {{9, 0}};
  const std::vector<PointLabel> bad_cls = {{0, 7}};
  EXPECT_THROW(masked_ce_loss_and_grad(BasicGrid<double>(2, 2, 3), bad_loc), DataError);
  EXPECT_THROW(masked_ce_loss_and_grad(BasicGrid<double>(2, 2, 3), bad_cls), DataError);
}

TEST(MaskedCe, MatchesFiniteDifferences) {
  Rng rng(6);
  BasicGrid<double> z(3, 4, 5);
  for (double& v : z.values()) v = rng.normal() * 2;
  const std::vector<PointLabel> labels = {{0, 1}, {5, 4}, {11, 0}, {5, 2}};
  const LossValue v = masked_ce_loss_and_grad(z, labels);
  const std::vector<double> x(z.values().begin(), z.values().end());
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& p) {
        return masked_ce_loss_and_grad(BasicGrid<double>(3, 4, 5, p), labels).loss;
      },
      x);
  const std::vector<double> analytic(v.grad.values().begin(), v.grad.values().end());
  EXPECT_LT(oracle::max_rel_error(analytic, fd), 1e-5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<float> p = {1.0f, -2.0f, 0.5f};
  const std::vector<double> g = {0.3, -4.0, 1e-3};
  AdamState s;
  s.lr = 0.01;
  adam_step(std::span<float>(p), g, s);
  EXPECT_EQ(s.t, 1u);
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-6);
  EXPECT_NEAR(p[2], 0.5 - 0.01, 1e-5);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p = {1.0, 2.0};
  AdamState s;
  adam_step(std::span<double>(p), std::vector<double>{0.0, 0.0}, s);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 2.0);
  EXPECT_EQ(s.m.size(), 2u);
}

TEST(Adam, MatchesClosedFormOverSteps) {
  // Constant gradient g: m_t/bc1 = g and v_t/bc2 = g^2 at every step.
  std::vector<double> p = {0.0};
  AdamState s;
  s.lr = 0.1;
  for (int t = 0; t < 5; ++t) adam_step(std::span<double>(p), std::vector<double>{2.0}, s);
  EXPECT_NEAR(p[0], -5 * 0.1 * 2.0 / (2.0 + 1e-8), 1e-9);
  EXPECT_EQ(s.t, 5u);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<double> p = {0.0, 1.0};
  AdamState s;
  EXPECT_THROW(adam_step(std::span<double>(p), std::vector<double>{1.0}, s), ShapeError);
}

TEST(GradCheck, ConstantLossPasses) {
  Rng rng(7);
  const std::vector<double> x = {1.0, 2.0, 3.0};
  const GradCheckResult r = grad_check(
      [](std::span<const double>, std::span<double> g) {
        for (double& v : g) v = 0.0;
        return 4.0;
      },
      x, rng);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.coords_checked, 3u);
}

TEST(GradCheck, DetectsWrongGradient) {
  Rng rng(8);
  const std::vector<double> x = {1.0, -2.0};
  const GradCheckResult r = grad_check(
      [](std::span<const double> p, std::span<double> g) {
        if (!g.empty()) {
          g[0] = 2 * p[0];
          g[1] = p[1];  // should be 2 * p[1]
        }
        return p[0] * p[0] + p[1] * p[1];
      },
      x, rng);
  EXPECT_GT(r.max_rel_error, 0.4);
  EXPECT_EQ(r.worst_coord, 1u);
}

TEST(GradCheck, LinearLayerWithMaskedCe) {
  Rng rng(9);
  Linear<double> layer(4, 3);
  layer.init_glorot(rng);
  BasicGrid<double> x(3, 3, 4);
  for (double& v : x.values()) v = rng.normal();
  const std::vector<PointLabel> labels = {{0, 2}, {4, 1}, {7, 0}};
  std::vector<double> params = layer.weight;
  params.insert(params.end(), layer.bias.begin(), layer.bias.end());
  auto loss = [&](std::span<const double> p, std::span<double> g) {
    Linear<double> l = layer;
    std::copy(p.begin(), p.begin() + 12, l.weight.begin());
    std::copy(p.begin() + 12, p.end(), l.bias.begin());
    const LossValue v = masked_ce_loss_and_grad(linear_forward(l, x), labels);
    if (!g.empty()) {
      std::fill(g.begin(), g.end(), 0.0);
      for (size_t i = 0; i < x.locations(); ++i) {
        for (size_t o = 0; o < 3; ++o) {
          for (size_t k = 0; k < 4; ++k) g[o * 4 + k] += v.grad(i, o) * x(i, k);
          g[12 + o] += v.grad(i, o);
        }
      }
    }
    return v.loss;
  };
  EXPECT_LT(grad_check(loss, params, rng).max_rel_error, 1e-4);
}

TEST(GradCheck, NetworkGradientsMatchIndependentDifferences) {
  // Backprop through the two-layer net under both pooled losses, compared
  // with the test-side finite differences.
  Rng rng(10);
  for (PoolingMode mode : {PoolingMode::kPerPixel, PoolingMode::kGlobal}) {
    TwoLayerNet<double> net(3, 5, 2);
    net.init(rng);
    BasicGrid<double> x(2, 3, 3);
    for (double& v : x.values()) v = rng.normal();
    auto forward_loss = [&](const TwoLayerNet<double>& n, TwoLayerGrad* g) {
      BasicGrid<double> pre;
      const BasicGrid<double> out = n.forward(x, &pre);
      std::vector<double> fg, bg;
      for (size_t i = 0; i < out.locations(); ++i) {
        fg.push_back(out(i, 0));
        bg.push_back(out(i, 1));
      }
      const PooledLoss l = bce_loss_and_grad(pool_scores<double>(mode, fg, bg), 1);
      if (g) {
        const double dfg[2] = {l.d_fg, 0.0};
        const double dbg[2] = {0.0, l.d_bg};
        n.backward(x.at(l.fg_loc), pre.at(l.fg_loc), dfg, *g);
        n.backward(x.at(l.bg_loc), pre.at(l.bg_loc), dbg, *g);
      }
      return l.loss;
    };
    TwoLayerGrad g = net.make_grad();
    forward_loss(net, &g);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& p) {
          TwoLayerNet<double> n = net;
          n.assign(p);
          return forward_loss(n, nullptr);
        },
        net.flatten());
    EXPECT_LT(oracle::max_rel_error(g.flatten(), fd), 1e-4) << to_string(mode);
  }
}

TEST(GradCheck, SuitePassesAtDoublePrecision) {
  const GradCheckSuite s = run_gradient_checks(3, 5);
  EXPECT_EQ(s.cases.size(), 15u);
  EXPECT_LT(s.max_rel_error(), 1e-4);
}

TEST(PoolingParse, NamesRoundTrip) {
  EXPECT_EQ(parse_pooling("pixel"), PoolingMode::kPerPixel);
  EXPECT_EQ(parse_pooling("per_pixel"), PoolingMode::kPerPixel);
  EXPECT_EQ(parse_pooling(to_string(PoolingMode::kGlobal)), PoolingMode::kGlobal);
  EXPECT_THROW(parse_pooling("mean"), ConfigError);
}
