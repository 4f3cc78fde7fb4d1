// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "danet/config.hpp"
#include "danet/errors.hpp"
#include "danet/io.hpp"

using namespace danet;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const std::string& name, const std::string& contents) {
  const auto dir = fs::temp_directory_path() / "danet_test_config";
  fs::create_directories(dir);
  const auto path = (dir / name).string();
  io::write_file(path, contents);
  return path;
}

std::string error_key(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST(RunConfig, DefaultsMatchTheStructs) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.model(), ModelConfig{});
  EXPECT_EQ(cfg.train(), TrainConfig{});
  const auto d = cfg.data();
  EXPECT_EQ(d.train_samples, DataConfig{}.train_samples);
  EXPECT_EQ(d.scene.marker_size, SceneConfig{}.marker_size);
  for (const auto& k : cfg.keys()) EXPECT_EQ(cfg.source(k), Source::default_value) << k;
}

TEST(RunConfig, LayersResolveFlagsLast) {
  RunConfig cfg;
  cfg.merge_file(temp_file("layers.json", R"({"train": {"epochs": 7, "base_lr": 0.05}, "run": {"seed": 3}})"));
  cfg.set("train.epochs", "2");
  EXPECT_EQ(cfg.get("train.epochs").get<int>(), 2);
  EXPECT_EQ(cfg.source("train.epochs"), Source::flag);
  EXPECT_DOUBLE_EQ(cfg.get("train.base_lr").get<double>(), 0.05);
  EXPECT_EQ(cfg.source("train.base_lr"), Source::file);
  EXPECT_EQ(cfg.source("train.momentum"), Source::default_value);
  EXPECT_EQ(cfg.train().epochs, 2);
  EXPECT_EQ(source_name(cfg.source("run.seed")), "file");
}

TEST(RunConfig, ListsAcceptCommasOrBrackets) {
  RunConfig cfg;
  cfg.set("run.eval_scales", "0.75,1,1.25");
  EXPECT_EQ(cfg.get("run.eval_scales").get<std::vector<double>>(), (std::vector<double>{0.75, 1.0, 1.25}));
  cfg.set("visualize.point", "[2, 5]");
  EXPECT_EQ(cfg.get("visualize.point").get<std::vector<int>>(), (std::vector<int>{2, 5}));
  cfg.set("run.variants", "pam,dual");
  EXPECT_EQ(cfg.get("run.variants").get<std::vector<std::string>>(), (std::vector<std::string>{"pam", "dual"}));
}

TEST(RunConfig, ErrorsNameTheOffendingKey) {
  RunConfig cfg;
  EXPECT_EQ(error_key([&] { cfg.set("train.epoch", "3"); }), "train.epoch");
  EXPECT_EQ(error_key([&] { cfg.set("train.epochs", "three"); }), "train.epochs");
  EXPECT_EQ(error_key([&] { cfg.set("train.epochs", "2.5"); }), "train.epochs");
  EXPECT_EQ(error_key([&] { cfg.set("train.scale_aug", "maybe"); }), "train.scale_aug");
  EXPECT_EQ(error_key([&] { cfg.merge_file(temp_file("bad_key.json", R"({"model": {"colour": 1}})")); }),
            "model.colour");
  EXPECT_EQ(error_key([&] { cfg.merge_file(temp_file("bad_type.json", R"({"train": {"epochs": "x"}})")); }),
            "train.epochs");
  EXPECT_EQ(error_key([&] { cfg.merge_file(temp_file("bad.json", "{not json")); }), "config");
  EXPECT_EQ(error_key([&] { cfg.merge_file("/nonexistent/danet.json"); }), "config");
  RunConfig v;
  v.set("model.variant", "triple");
  EXPECT_EQ(error_key([&] { (void)v.model(); }), "model.variant");
  RunConfig r;
  r.set("data.marker_rule", "stripes");
  EXPECT_EQ(error_key([&] { (void)r.data(); }), "data.marker_rule");
}

TEST(RunConfig, IntegralFloatsAreAcceptedForIntegers) {
  RunConfig cfg;
  cfg.merge_json(nlohmann::json::parse(R"({"train": {"epochs": 4.0}})"), Source::file);
  EXPECT_EQ(cfg.train().epochs, 4);
}

TEST(RunConfig, DumpRoundTripIsIdempotent) {
  RunConfig a;
  a.set("train.epochs", "3");
  a.set("model.variant", "cam");
  a.set("run.eval_scales", "0.5,1");
  const auto path = temp_file("round.json", a.dump());
  RunConfig b;
  b.merge_file(path);
  EXPECT_EQ(a.document(), b.document());
  EXPECT_EQ(a.dump(), b.dump());
  RunConfig c;
  c.merge_file(temp_file("round2.json", b.dump()));
  EXPECT_EQ(b.dump(), c.dump());
  EXPECT_EQ(b.model(), a.model());
  EXPECT_EQ(b.train(), a.train());
}

TEST(RunConfig, ParseHelpers) {
  EXPECT_EQ(parse_number_list("k", "1,2.5"), (std::vector<double>{1.0, 2.5}));
  EXPECT_EQ(parse_point("k", "3,4"), (std::pair<std::int64_t, std::int64_t>{3, 4}));
  EXPECT_THROW(parse_point("k", "3"), ConfigError);
  EXPECT_THROW(parse_number_list("k", ""), ConfigError);
  EXPECT_THROW(parse_number_list("k", "1,x"), ConfigError);
}
