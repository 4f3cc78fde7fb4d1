// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "danet/model.hpp"
#include "danet/ops.hpp"
#include "danet/oracles.hpp"
#include "danet/synth.hpp"

using namespace danet;

namespace {

ModelConfig config_for(Variant v) {
  ModelConfig cfg;
  cfg.variant = v;
  return cfg;
}

Tensor<double> random_images(std::int64_t n, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_tensor<double>({n, 3, h, w}, rng, 0.0, 1.0);
}

std::map<std::string, Tensor<double>> by_name(const std::vector<NamedTensor<double>>& ts) {
  std::map<std::string, Tensor<double>> out;
  for (const auto& t : ts) out.emplace(t.name, t.tensor);
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("danet_test_model_" + name);
}

}  // namespace

TEST(Model, SameSeedGivesIdenticalParameters) {
  for (auto v : {Variant::baseline_fcn, Variant::pam_only, Variant::cam_only, Variant::dual}) {
    const Model<double> a(config_for(v), 7), b(config_for(v), 7), c(config_for(v), 8);
    const auto pa = a.state(), pb = b.state(), pc = c.state();
    ASSERT_EQ(pa.size(), pb.size());
    bool any_differs = false;
    for (size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(pa[i].name, pb[i].name);
      EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values()) << pa[i].name;
      any_differs = any_differs || pa[i].tensor.values() != pc[i].tensor.values();
    }
    EXPECT_TRUE(any_differs);
  }
}

TEST(Model, BaselineHasNoAttentionParameters) {
  const Model<double> m(config_for(Variant::baseline_fcn), 0);
  EXPECT_FALSE(m.position_attention().has_value());
  EXPECT_FALSE(m.channel_attention().has_value());
  for (const auto& p : m.parameters()) {
    EXPECT_EQ(p.name.find("pam"), std::string::npos) << p.name;
    EXPECT_EQ(p.name.find("cam"), std::string::npos) << p.name;
  }
}

TEST(Model, FeatureMapIsOneEighthOfInput) {
  Model<double> m(config_for(Variant::baseline_fcn), 0);
  NoGradGuard g;
  for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{64, 64}, {8, 16}, {40, 24}}) {
    const auto f = m.backbone(random_images(1, h, w, 1), false);
    EXPECT_EQ(f.size(2), h / 8);
    EXPECT_EQ(f.size(3), w / 8);
  }
  const auto out = m.forward(random_images(2, 64, 64, 2));
  EXPECT_EQ(out.main_logits.shape(), (Shape{2, 6, 64, 64}));
  EXPECT_EQ(out.feature_h, 8);
  EXPECT_EQ(out.feature_w, 8);
}

TEST(Model, IndivisibleExtentIsDimensionError) {
  Model<double> m(config_for(Variant::dual), 0);
  EXPECT_THROW(m.forward(random_images(1, 60, 64, 0)), DimensionError);
  EXPECT_THROW(m.forward(random_images(1, 64, 12, 0)), DimensionError);
}

TEST(Model, InvalidConfigNamesKey) {
  ModelConfig cfg;
  cfg.multi_grid = {4, 0};
  try {
    cfg.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.multi_grid");
  }
  cfg = ModelConfig{};
  cfg.stage_dilations = {2, 1, 1, 1};
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(parse_variant("psp"), ConfigError);
}

TEST(Model, CaptureAttentionShapes) {
  Model<double> m(config_for(Variant::dual), 3);
  NoGradGuard g;
  const auto out = m.forward(random_images(2, 64, 48, 4), {.capture_attention = true});
  ASSERT_TRUE(out.spatial && out.channel);
  const auto n = 8 * 6;
  EXPECT_EQ(out.spatial->matrix.shape(), (Shape{2, n, n}));
  const auto c = m.config().module_channels;
  EXPECT_EQ(out.channel->matrix.shape(), (Shape{2, c, c}));
  EXPECT_EQ(out.aux_logits.size(), 2U);
  for (const auto& a : out.aux_logits) EXPECT_EQ(a.shape(), out.main_logits.shape());
}

TEST(Model, DualAtInitMatchesAttentionFreePath) {
  Model<double> m(config_for(Variant::dual), 11);
  NoGradGuard g;
  const auto x = random_images(2, 32, 32, 5);
  const auto with = m.forward(x);
  const auto without = m.forward(x, {.bypass_attention = true});
  EXPECT_LE(max_abs_diff(with.main_logits, without.main_logits), 1e-6);
  for (auto v : with.main_logits.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Model, PamMatchesDualWithZeroedChannelBranch) {
  Model<double> pam(config_for(Variant::pam_only), 21);
  Model<double> dual(config_for(Variant::dual), 22);
  auto src = by_name(pam.state());
  for (auto& [name, t] : by_name(dual.state())) {
    if (auto it = src.find(name); it != src.end()) {
      std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
    } else if (name.starts_with("cam.post.") && !name.ends_with("running_var")) {
      std::fill(t.data().begin(), t.data().end(), 0.0);
    }
  }
  // Non-zero α so the position branch is exercised.
  pam.position_attention()->alpha.storage().data[0] = 0.7;
  dual.position_attention()->alpha.storage().data[0] = 0.7;
  NoGradGuard g;
  const auto x = random_images(2, 32, 40, 6);
  EXPECT_LE(max_abs_diff(pam.forward(x).main_logits, dual.forward(x).main_logits), 1e-5);
}

TEST(Model, DualAddsOnlyBranchParameters) {
  const Model<double> base(config_for(Variant::baseline_fcn), 0), dual(config_for(Variant::dual), 0);
  std::set<std::string> base_names, extra;
  for (const auto& p : base.parameters()) base_names.insert(p.name);
  for (const auto& p : dual.parameters()) {
    if (!base_names.count(p.name)) extra.insert(p.name.substr(0, p.name.find('.')));
  }
  EXPECT_EQ(extra, (std::set<std::string>{"aux", "cam", "pam"}));
  const auto dual_names = by_name(dual.parameters());
  for (const auto& n : base_names) {
    if (!n.starts_with("fcn.")) EXPECT_TRUE(dual_names.count(n)) << n;
  }
}

TEST(Model, BaselineOutputOnTextureIgnoresMarker) {
  Model<double> m(config_for(Variant::baseline_fcn), 3);
  SceneConfig sc;
  sc.noise_std = 0;
  std::int64_t region = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = generate_sample(sc, seed);
    auto flipped = s;
    for (std::int64_t y = 0; y < s.height; ++y) {
      for (std::int64_t x = 0; x < s.width; ++x) {
        if (!s.marker[static_cast<size_t>(y * s.width + x)]) continue;
        for (std::int64_t c = 0; c < 3; ++c) flipped.pixel(c, y, x) = 1.0f - s.pixel(c, y, x);
      }
    }
    NoGradGuard g;
    const auto a = m.forward(make_batch<double>({s}).first).main_logits;
    const auto b = m.forward(make_batch<double>({flipped}).first).main_logits;
    const auto hw = static_cast<std::int64_t>(s.labels.size());
    for (std::int64_t p = 0; p < hw; ++p) {
      if (s.marker[static_cast<size_t>(p)] || s.labels[static_cast<size_t>(p)] < kAmbiguousA) continue;
      ++region;
      for (std::int64_t c = 0; c < 6; ++c) ASSERT_EQ(a[c * hw + p], b[c * hw + p]) << "seed " << seed;
    }
  }
  EXPECT_GT(region, 0);
}

TEST(MultiLoss, MatchesComposedOracle) {
  Model<double> m(config_for(Variant::dual), 4);
  const auto x = random_images(2, 16, 16, 9);
  Rng rng(10);
  LabelMap labels(2, 16, 16);
  for (auto& id : labels.ids) id = static_cast<std::int32_t>(rng.uniform_int(0, 5));
  labels.ids[3] = kIgnoreIndex;
  NoGradGuard g;
  const auto out = m.forward(x);
  ASSERT_EQ(out.aux_logits.size(), 2U);
  const double main = oracle::cross_entropy(out.main_logits, labels, kIgnoreIndex);
  const double expect = main + 0.5 * (oracle::cross_entropy(out.aux_logits[0], labels, kIgnoreIndex) +
                                      oracle::cross_entropy(out.aux_logits[1], labels, kIgnoreIndex));
  EXPECT_NEAR(multi_loss(out, labels, 0.5).item(), expect, 1e-10);
  EXPECT_NEAR(multi_loss(out, labels, 0.0).item(), main, 1e-10);
  EXPECT_THROW(multi_loss(out, labels, -1.0), ContractError);
  EXPECT_THROW(multi_loss(out, LabelMap(2, 8, 8), 0.5), DimensionError);

  Model<double> pam(config_for(Variant::pam_only), 4);
  const auto single = pam.forward(x);
  EXPECT_TRUE(single.aux_logits.empty());
  EXPECT_NEAR(multi_loss(single, labels, 0.5).item(), oracle::cross_entropy(single.main_logits, labels, kIgnoreIndex),
              1e-10);
}

TEST(Model, RemainsFiniteAfterTrainingSteps) {
  Model<float> m(config_for(Variant::dual), 1);
  const auto data = generate_dataset(SceneConfig{}, 8, 3);
  const auto [x, labels] = make_batch<float>(data);
  auto params = m.parameters();
  for (int step = 0; step < 100; ++step) {
    m.zero_grad();
    auto loss = multi_loss(m.forward(x, {.training = true}), labels, 0.5);
    ASSERT_TRUE(std::isfinite(loss.item())) << "step " << step;
    backward(loss);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      auto d = p.tensor.data();
      auto gr = p.tensor.grad();
      for (size_t i = 0; i < d.size(); ++i) d[i] -= 0.1f * gr[i];
    }
  }
  NoGradGuard g;
  for (auto v : m.forward(x).main_logits.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Checkpoint, RoundTripPreservesStateAndConfig) {
  ModelConfig cfg = config_for(Variant::dual);
  cfg.multi_grid = {1, 2};
  Model<double> m(cfg, 5);
  m.position_attention()->alpha.storage().data[0] = 0.25;
  const auto path = temp_path("roundtrip.ckpt").string();
  save_model(m, path);
  Model<double> back = load_model<double>(path);
  EXPECT_EQ(back.config(), cfg);
  const auto a = m.state(), b = back.state();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].tensor.shape(), b[i].tensor.shape());
    EXPECT_EQ(a[i].tensor.values(), b[i].tensor.values()) << a[i].name;
  }
  const auto ckpt = read_checkpoint(path);
  EXPECT_EQ(model_config_from_json(ckpt.metadata), cfg);
  EXPECT_EQ(ckpt.tensors.front().dtype, 2);

  Model<float> f(cfg, 5);
  save_model(f, path);
  EXPECT_EQ(read_checkpoint(path).tensors.front().dtype, 1);
  std::filesystem::remove(path);
}

TEST(Checkpoint, LoadStateRejectsMismatch) {
  Model<double> dual(config_for(Variant::dual), 0);
  const auto path = temp_path("mismatch.ckpt").string();
  save_model(Model<double>(config_for(Variant::pam_only), 0), path);
  EXPECT_THROW(load_state(dual, read_checkpoint(path)), ContractError);
  ModelConfig wide = config_for(Variant::pam_only);
  wide.module_channels = 16;
  Model<double> narrow(wide, 0);
  EXPECT_THROW(load_state(narrow, read_checkpoint(path)), DimensionError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_checkpoint(path), std::exception);
}
