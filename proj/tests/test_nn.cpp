// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "danet/gradcheck.hpp"
#include "danet/nn.hpp"
#include "danet/ops.hpp"
#include "danet/oracles.hpp"

using namespace danet;
using T64 = Tensor<double>;

namespace {

T64 leaf(T64 t) { return t.set_requires_grad(true), t; }

Conv2dParams<double> conv_with(T64 weight, std::int64_t stride, std::int64_t pad, std::int64_t dil) {
  Conv2dParams<double> p;
  p.weight = leaf(std::move(weight));
  p.bias = T64::zeros({p.weight.size(0)});
  p.stride = stride;
  p.padding = pad;
  p.dilation = dil;
  return p;
}

// Random weights so every output element enters the loss differently.
T64 weighted_sum(const T64& t, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(t, uniform_tensor<double>(t.shape(), rng)));
}

}  // namespace

TEST(Conv2d, PointwiseIdentity) {
  Rng rng(1);
  const T64 x = uniform_tensor<double>({2, 3, 4, 5}, rng);
  T64 w = T64::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1;
  EXPECT_EQ(conv2d(x, conv_with(w, 1, 0, 1)).values(), x.values());
}

TEST(Conv2d, AllOnesKernelOnOnesInput) {
  for (std::int64_t cin : {1, 2, 5}) {
    const T64 out = conv2d(T64::ones({1, cin, 3, 3}), conv_with(T64::ones({1, cin, 3, 3}), 1, 0, 1));
    ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(out[0], 9.0 * static_cast<double>(cin));
  }
}

TEST(Conv2d, DilatedMatchesSlidingWindowOracle) {
  Rng rng(7);
  const T64 x = uniform_tensor<double>({1, 2, 7, 7}, rng);
  auto p = conv_with(uniform_tensor<double>({3, 2, 3, 3}, rng), 1, 0, 2);
  const T64 fast = conv2d(x, p), ref = oracle::conv2d(x, p.weight, nullptr, 1, 0, 2);
  ASSERT_EQ(fast.shape(), ref.shape());
  for (std::int64_t i = 0; i < fast.numel(); ++i) EXPECT_NEAR(fast[i], ref[i], 1e-10);
}

TEST(Conv2d, OracleAgreementOverKernelDilationPadding) {
  Rng rng(17);
  for (std::int64_t k : {1, 3})
    for (std::int64_t dil : {1, 2})
      for (std::int64_t pad : {0, 1, 2})
        for (std::int64_t stride : {1, 2}) {
          const T64 x = uniform_tensor<double>({2, 3, 7, 6}, rng);
          auto p = conv_with(uniform_tensor<double>({4, 3, k, k}, rng), stride, pad, dil);
          p.has_bias = true;
          p.bias = uniform_tensor<double>({4}, rng);
          const T64 fast = conv2d(x, p), ref = oracle::conv2d(x, p.weight, &p.bias, stride, pad, dil);
          ASSERT_EQ(fast.shape(), ref.shape()) << k << dil << pad;
          for (std::int64_t i = 0; i < fast.numel(); ++i) ASSERT_NEAR(fast[i], ref[i], 1e-10);
        }
}

TEST(Conv2d, ShapeErrors) {
  const T64 x = T64::ones({1, 2, 3, 3});
  EXPECT_THROW(conv2d(x, conv_with(T64::ones({1, 3, 1, 1}), 1, 0, 1)), DimensionError);
  EXPECT_THROW(conv2d(x, conv_with(T64::ones({1, 2, 3, 3}), 1, 0, 2)), DimensionError);
}

TEST(Conv2d, OutputExtentFormula) {
  EXPECT_EQ(conv_out_extent(64, 3, 2, 1, 1), 32);
  EXPECT_EQ(conv_out_extent(8, 3, 1, 4, 4), 8);
  EXPECT_EQ(conv_out_extent(7, 3, 1, 0, 2), 3);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
    const std::int64_t k = rng.bernoulli(0.5) ? 3 : 1;
    const auto dil = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 2), stride = rng.uniform_int(1, 2);
    const auto h = rng.uniform_int(dil * (k - 1) + 1, 8), w = rng.uniform_int(dil * (k - 1) + 1, 8);
    T64 x = leaf(uniform_tensor<double>({2, cin, h, w}, rng));
    auto p = conv_with(uniform_tensor<double>({cout, cin, k, k}, rng), stride, pad, dil);
    p.has_bias = true;
    p.bias = leaf(uniform_tensor<double>({cout}, rng));
    const double err = gradient_error<double>([&] { return weighted_sum(conv2d(x, p), 5); },
                                              {x, p.weight, p.bias});
    EXPECT_LE(err, 1e-4) << "trial " << trial;
  }
}

TEST(BatchNorm, StandardisedInputPassesThrough) {
  // Two values per channel at ±1: zero mean, unit (biased) variance.
  T64 x({2, 2, 1, 1}, {1, -1, -1, 1});
  auto bn = make_batch_norm<double>(2);
  const T64 y = batch_norm(x, bn, true);
  for (std::int64_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(3);
  auto bn = make_batch_norm<double>(3);
  for (int c = 0; c < 3; ++c) {
    bn.gamma[c] = 0;
    bn.beta[c] = 5;
  }
  for (double v : batch_norm(uniform_tensor<double>({2, 3, 4, 4}, rng), bn, true).values()) EXPECT_EQ(v, 5.0);
}

TEST(BatchNorm, OutputMomentsMatchAffineParameters) {
  Rng rng(12);
  auto bn = make_batch_norm<double>(3);
  for (int c = 0; c < 3; ++c) {
    bn.gamma[c] = rng.uniform(0.5, 2);
    bn.beta[c] = rng.uniform(-1, 1);
  }
  T64 x = uniform_tensor<double>({4, 3, 5, 5}, rng, -3, 7);
  const T64 y = batch_norm(x, bn, true);
  for (int c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    const int count = 4 * 25;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i) s += y[(b * 3 + c) * 25 + i];
    const double mu = s / count;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i) ss += (y[(b * 3 + c) * 25 + i] - mu) * (y[(b * 3 + c) * 25 + i] - mu);
    EXPECT_NEAR(mu, bn.beta[c], 1e-4);
    EXPECT_NEAR(ss / count, bn.gamma[c] * bn.gamma[c], 1e-4);
  }
}

TEST(BatchNorm, TrainingUpdatesRunningStatsAndEvalIsAffine) {
  T64 x({2, 1, 1, 2}, {1, 2, 3, 6});  // mean 3, biased var 3.5, unbiased 14/3
  auto bn = make_batch_norm<double>(1);
  batch_norm(x, bn, true);
  EXPECT_NEAR(bn.running_mean[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
  const T64 y = batch_norm(x, bn, false);
  const double scale = 1.0 / std::sqrt(bn.running_var[0] + bn.eps);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y[i], (x[i] - bn.running_mean[0]) * scale, 1e-12);
  // Determinism: the same eval call twice gives identical bits.
  EXPECT_EQ(batch_norm(x, bn, false).values(), y.values());
}

TEST(BatchNorm, SingleElementZeroVarianceUsesEpsFloor) {
  auto bn = make_batch_norm<double>(1);
  const T64 y = batch_norm(T64({1, 1, 1, 1}, {4.0}), bn, true);
  EXPECT_TRUE(std::isfinite(y[0]));
  EXPECT_EQ(y[0], 0.0);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  Rng rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = rng.uniform_int(1, 3), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    const auto n = rng.uniform_int(2, 3);
    T64 x = leaf(uniform_tensor<double>({n, c, h, w}, rng, -2, 2));
    auto bn = make_batch_norm<double>(c);
    for (std::int64_t i = 0; i < c; ++i) {
      bn.gamma[i] = rng.uniform(0.5, 1.5);
      bn.beta[i] = rng.uniform(-0.5, 0.5);
      bn.running_mean[i] = rng.uniform(-0.5, 0.5);
      bn.running_var[i] = rng.uniform(0.5, 2);
    }
    const bool training = trial % 2 == 0;
    const double err = gradient_error<double>([&] { return weighted_sum(batch_norm(x, bn, training), 3); },
                                              {x, bn.gamma, bn.beta});
    EXPECT_LE(err, 1e-4) << "trial " << trial << (training ? " train" : " eval");
  }
}

TEST(Upsample, SameExtentIsIdentityAndConstantStaysConstant) {
  Rng rng(2);
  const T64 x = uniform_tensor<double>({1, 2, 3, 4}, rng);
  EXPECT_EQ(upsample_bilinear(x, 3, 4).values(), x.values());
  for (double v : upsample_bilinear(T64::full({1, 1, 3, 3}, 2.5), 7, 5).values()) EXPECT_NEAR(v, 2.5, 1e-15);
}

TEST(Upsample, DoubleWidthOfTwoPixelRow) {
  // Half-pixel centres: outputs sample source x = -0.25(→0), 0.25, 0.75, 1.25(→1).
  const T64 y = upsample_bilinear(T64({1, 1, 1, 2}, {1, 3}), 1, 4);
  EXPECT_EQ(y.values(), (std::vector<double>{1.0, 1.5, 2.5, 3.0}));
}

TEST(Upsample, MatchesScalarOracleAndGradients) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
    const auto oh = rng.uniform_int(1, 8), ow = rng.uniform_int(1, 8);
    T64 x = leaf(uniform_tensor<double>({2, 2, h, w}, rng));
    const T64 fast = upsample_bilinear(x, oh, ow), ref = oracle::upsample_bilinear(x, oh, ow);
    for (std::int64_t i = 0; i < fast.numel(); ++i) ASSERT_NEAR(fast[i], ref[i], 1e-12);
    EXPECT_LE(gradient_error<double>([&] { return weighted_sum(upsample_bilinear(x, oh, ow), 8); }, {x}), 1e-4);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  LabelMap labels(1, 2, 2);
  labels.ids = {0, 1, 2, 3};
  EXPECT_NEAR(cross_entropy(T64::zeros({1, 4, 2, 2}), labels).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, DecreasesTowardZeroWithMargin) {
  LabelMap labels(1, 1, 1, 1);
  double previous = INFINITY;
  for (double margin : {0.0, 1.0, 4.0, 16.0, 64.0}) {
    const double loss = cross_entropy(T64({1, 3, 1, 1}, {0, margin, 0}), labels).item();
    EXPECT_GE(loss, 0.0);
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-20);
}

TEST(CrossEntropy, MatchesPerPixelOracle) {
  Rng rng(6);
  const T64 logits = uniform_tensor<double>({1, 2, 2, 2}, rng, -3, 3);
  LabelMap labels(1, 2, 2);
  labels.ids = {0, 1, 1, 0};
  double expected = 0;
  for (int p = 0; p < 4; ++p) {
    const double z0 = logits[p], z1 = logits[4 + p];
    const double zy = labels.ids[static_cast<size_t>(p)] == 0 ? z0 : z1;
    expected += std::log(std::exp(z0) + std::exp(z1)) - zy;
  }
  EXPECT_NEAR(cross_entropy(logits, labels).item(), expected / 4, 1e-10);
}

TEST(CrossEntropy, IgnoredPixelsAndErrors) {
  T64 logits({1, 2, 1, 2}, {5, 0, 0, 0});
  LabelMap labels(1, 1, 2);
  labels.ids = {0, kIgnoreIndex};
  EXPECT_NEAR(cross_entropy(logits, labels).item(), std::log(1 + std::exp(-5.0)), 1e-14);
  labels.ids = {kIgnoreIndex, kIgnoreIndex};
  EXPECT_EQ(cross_entropy(logits, labels).item(), 0.0);
  labels.ids = {0, 2};
  EXPECT_THROW(cross_entropy(logits, labels), ContractError);
  EXPECT_THROW(cross_entropy(logits, LabelMap(1, 2, 2)), DimensionError);
}

TEST(CrossEntropy, GradientsMatchFiniteDifferences) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const auto k = rng.uniform_int(2, 5), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    T64 logits = leaf(uniform_tensor<double>({2, k, h, w}, rng, -3, 3));
    LabelMap labels(2, h, w);
    for (auto& id : labels.ids) id = rng.bernoulli(0.15) ? kIgnoreIndex : static_cast<std::int32_t>(rng.uniform_int(0, k - 1));
    EXPECT_LE(gradient_error<double>([&] { return cross_entropy(logits, labels); }, {logits}), 1e-4);
  }
}
