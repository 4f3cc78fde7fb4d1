// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "danet/io.hpp"
#include "danet/synth.hpp"

using namespace danet;

namespace {

std::set<std::int32_t> ids_of(const SegSample& s) { return {s.labels.begin(), s.labels.end()}; }

}  // namespace

TEST(Synth, GenerationIsPureInConfigAndSeed) {
  const SceneConfig cfg;
  EXPECT_EQ(generate_sample(cfg, 42), generate_sample(cfg, 42));
  EXPECT_NE(generate_sample(cfg, 42), generate_sample(cfg, 43));
  EXPECT_EQ(generate_dataset(cfg, 5, 9), generate_dataset(cfg, 5, 9));
}

TEST(Synth, BlankSceneIsBackground) {
  SceneConfig cfg;
  cfg.noise_std = 0;
  cfg.min_shapes = cfg.max_shapes = 0;
  const auto s = generate_sample(cfg, 3);
  EXPECT_EQ(ids_of(s), (std::set<std::int32_t>{0}));
  for (std::int64_t c = 1; c < 3; ++c) EXPECT_EQ(s.pixel(c, 5, 5), s.pixel(c, 40, 60));
}

TEST(Synth, EverySceneHasAmbiguousRegionAndItsMarker) {
  const SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = generate_sample(cfg, seed);
    std::int64_t texture = 0, marker = 0;
    std::set<std::int32_t> cls;
    for (size_t p = 0; p < s.labels.size(); ++p) {
      const auto id = s.labels[p];
      ASSERT_GE(id, 0);
      ASSERT_LT(id, 6);
      if (s.marker[p]) {
        ++marker;
        cls.insert(id);
      } else if (id >= kAmbiguousA) {
        ++texture;
        cls.insert(id);
      }
    }
    EXPECT_EQ(marker, cfg.marker_size * cfg.marker_size) << seed;
    EXPECT_GT(texture, 0) << seed;
    EXPECT_EQ(cls.size(), 1U) << seed;  // marker and texture agree
    for (auto v : s.image) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Synth, TextureKeepsContextGapFromMarker) {
  const SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto s = generate_sample(cfg, seed);
    std::int64_t my0 = 1 << 20, my1 = -1, mx0 = 1 << 20, mx1 = -1;
    for (std::int64_t y = 0; y < s.height; ++y) {
      for (std::int64_t x = 0; x < s.width; ++x) {
        if (!s.marker[static_cast<size_t>(y * s.width + x)]) continue;
        my0 = std::min(my0, y), my1 = std::max(my1, y), mx0 = std::min(mx0, x), mx1 = std::max(mx1, x);
      }
    }
    for (std::int64_t y = 0; y < s.height; ++y) {
      for (std::int64_t x = 0; x < s.width; ++x) {
        if (s.marker[static_cast<size_t>(y * s.width + x)] || s.label(y, x) < kAmbiguousA) continue;
        const auto dy = std::max<std::int64_t>({my0 - y, y - my1, 0});
        const auto dx = std::max<std::int64_t>({mx0 - x, x - mx1, 0});
        ASSERT_GT(std::max(dy, dx), kContextGap) << "seed " << seed;
      }
    }
  }
}

TEST(Synth, LabelHistogramCoversAllClasses) {
  const auto data = generate_dataset(SceneConfig{}, 1000, 77);
  std::vector<std::int64_t> hist(6, 0);
  std::int64_t total = 0;
  for (const auto& s : data) {
    for (auto id : s.labels) ++hist[static_cast<size_t>(id)], ++total;
  }
  for (size_t c = 0; c < 6; ++c) {
    EXPECT_GE(static_cast<double>(hist[c]) / static_cast<double>(total), 0.01) << "class " << c;
  }
}

TEST(Synth, MarkerRuleNoneGivesSingleTextureClass) {
  SceneConfig cfg;
  cfg.marker_rule = MarkerRule::none;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = generate_sample(cfg, seed);
    EXPECT_EQ(ids_of(s).count(kAmbiguousB), 0U);
    EXPECT_EQ(ids_of(s).count(kAmbiguousA), 1U);
  }
}

TEST(Synth, InvalidConfigNamesKey) {
  SceneConfig cfg;
  cfg.height = 60;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SceneConfig{};
  cfg.noise_std = -1;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "data.noise_std");
  }
}

TEST(Augment, FullCropWithoutFlipIsIdentity) {
  const auto s = generate_sample(SceneConfig{}, 1);
  Rng rng(0);
  EXPECT_EQ(augment(s, {64, 64}, 0.0, rng), s);
}

TEST(Augment, DoubleFlipIsIdentity) {
  const auto s = generate_sample(SceneConfig{}, 2);
  Rng rng(0);
  const auto once = augment(s, {64, 64}, 1.0, rng);
  EXPECT_NE(once, s);
  EXPECT_EQ(augment(once, {64, 64}, 1.0, rng), s);
}

TEST(Augment, CropMatchesSubmapOfImageAndLabels) {
  const auto s = generate_sample(SceneConfig{}, 3);
  for (bool flip : {false, true}) {
    const auto c = crop_sample(s, 5, 3, 56, 48, flip);
    for (std::int64_t y = 0; y < 56; ++y) {
      for (std::int64_t x = 0; x < 48; ++x) {
        const auto sx = 3 + (flip ? 47 - x : x);
        ASSERT_EQ(c.label(y, x), s.label(5 + y, sx));
        ASSERT_EQ(c.marker[static_cast<size_t>(y * 48 + x)], s.marker[static_cast<size_t>((5 + y) * 64 + sx)]);
        for (std::int64_t ch = 0; ch < 3; ++ch) ASSERT_EQ(c.pixel(ch, y, x), s.pixel(ch, 5 + y, sx));
      }
    }
  }
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto a = augment(s, {56, 56}, 0.5, rng);
    EXPECT_EQ(a.height, 56);
    for (auto id : ids_of(a)) EXPECT_TRUE(ids_of(s).count(id));
  }
}

TEST(Augment, OversizedCropIsContractError) {
  const auto s = generate_sample(SceneConfig{}, 3);
  Rng rng(0);
  EXPECT_THROW(augment(s, {72, 64}, 0.5, rng), ContractError);
  EXPECT_THROW(crop_sample(s, 10, 0, 60, 64, false), ContractError);
}

TEST(ScaleAugment, UnitFactorIsIdentity) {
  const auto s = generate_sample(SceneConfig{}, 5);
  EXPECT_EQ(scale_augment(s, 1.0), s);
}

TEST(ScaleAugment, FactorTwoDoublesExtents) {
  const auto s = generate_sample(SceneConfig{}, 6);
  const auto big = scale_augment(s, 2.0);
  EXPECT_EQ(big.height, 128);
  EXPECT_EQ(big.width, 128);
  EXPECT_EQ(big.image.size(), 3U * 128 * 128);
  for (std::int64_t y = 0; y < 128; ++y) {
    for (std::int64_t x = 0; x < 128; ++x) ASSERT_EQ(big.label(y, x), s.label(y / 2, x / 2));
  }
}

TEST(ScaleAugment, NearestLabelsIntroduceNoNewIds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_sample(SceneConfig{}, seed);
    for (double f : {0.75, 1.25, 0.5, 1.7}) {
      const auto r = scale_augment(s, f);
      for (auto id : ids_of(r)) EXPECT_TRUE(ids_of(s).count(id)) << "factor " << f;
    }
  }
}

TEST(ScaleAugment, TooSmallResultIsContractError) {
  const auto s = generate_sample(SceneConfig{}, 7);
  EXPECT_THROW(scale_augment(s, 0.75, {56, 56}), ContractError);
  EXPECT_THROW(scale_augment(s, 0.0), ContractError);
  EXPECT_THROW(scale_augment(s, -1.0), ContractError);
  EXPECT_NO_THROW(scale_augment(s, 1.25, {56, 56}));
}

TEST(Synth, BlindCeilingCountsTexturePixels) {
  SegSample s;
  s.height = 1;
  s.width = 6;
  s.image.assign(18, 0.5f);
  s.labels = {4, 4, 4, 5, 5, 0};
  s.marker = {0, 0, 0, 1, 0, 0};
  EXPECT_DOUBLE_EQ(marker_blind_ceiling({s}), 0.75);
  s.labels = {0, 1, 2, 3, 0, 0};
  EXPECT_DOUBLE_EQ(marker_blind_ceiling({s}), 1.0);

  const auto data = generate_dataset(SceneConfig{}, 400, 1);
  const double c = marker_blind_ceiling(data);
  EXPECT_GE(c, 0.5);
  EXPECT_LT(c, 0.6);  // the two colours are equally likely
}

TEST(Synth, DatasetDumpRoundTrips) {
  const auto dir = (std::filesystem::temp_directory_path() / "danet_test_synth_dump").string();
  std::filesystem::remove_all(dir);
  const auto data = generate_dataset(SceneConfig{}, 3, 8);
  write_dataset(data, dir);
  const auto manifest = io::parse_csv(io::read_file(dir + "/manifest.csv"));
  ASSERT_EQ(manifest.size(), 4U);
  EXPECT_EQ(manifest[0], (std::vector<std::string>{"index", "image", "label"}));
  for (size_t i = 0; i < 3; ++i) {
    const auto img = io::read_netpbm(dir + "/" + manifest[i + 1][1]);
    const auto lab = io::read_netpbm(dir + "/" + manifest[i + 1][2]);
    EXPECT_EQ(img.channels, 3);
    EXPECT_EQ(lab.channels, 1);
    EXPECT_EQ(img.width, 64);
    for (size_t p = 0; p < lab.pixels.size(); ++p) ASSERT_EQ(lab.pixels[p], data[i].labels[p]);
    const auto v = data[i].pixel(1, 10, 20);
    EXPECT_EQ(img.pixels[(10 * 64 + 20) * 3 + 1], static_cast<std::uint8_t>(std::floor(v * 255.0f + 0.5f)));
  }
  std::filesystem::remove_all(dir);
}

TEST(Batch, StacksSamples) {
  const auto data = generate_dataset(SceneConfig{}, 2, 0);
  const auto [x, y] = make_batch<double>(data);
  EXPECT_EQ(x.shape(), (Shape{2, 3, 64, 64}));
  EXPECT_EQ(y.at(1, 7, 9), data[1].label(7, 9));
  EXPECT_EQ(x[((1 * 3 + 2) * 64 + 7) * 64 + 9], static_cast<double>(data[1].pixel(2, 7, 9)));
  EXPECT_THROW(make_batch<double>({}), ContractError);
}
