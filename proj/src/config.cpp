// SPDX-License-Identifier: Apache-2.0
#include "danet/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "danet/errors.hpp"

namespace danet {

namespace {

using nlohmann::json;

enum class Kind { integer, real, boolean, text, int_list, real_list, text_list };

// Leaf kinds of every recognised key; the defaults fill in the values.
const std::map<std::string, Kind>& schema() {
  static const std::map<std::string, Kind> s = {
      {"model.num_classes", Kind::integer},       {"model.backbone_channels", Kind::int_list},
      {"model.module_channels", Kind::integer},   {"model.reduction_ratio", Kind::integer},
      {"model.stage_dilations", Kind::int_list},  {"model.blocks_per_stage", Kind::integer},
      {"model.branch_kernel", Kind::integer},     {"model.multi_grid", Kind::int_list},
      {"model.variant", Kind::text},              {"train.base_lr", Kind::real},
      {"train.poly_power", Kind::real},           {"train.momentum", Kind::real},
      {"train.weight_decay", Kind::real},         {"train.epochs", Kind::integer},
      {"train.batch_size", Kind::integer},        {"train.aux_weight", Kind::real},
      {"train.seeds", Kind::int_list},            {"train.crop_h", Kind::integer},
      {"train.crop_w", Kind::integer},            {"train.flip_prob", Kind::real},
      {"train.scale_aug", Kind::boolean},         {"train.scales", Kind::real_list},
      {"train.eval_batch", Kind::integer},        {"data.height", Kind::integer},
      {"data.width", Kind::integer},              {"data.num_classes", Kind::integer},
      {"data.min_shapes", Kind::integer},         {"data.max_shapes", Kind::integer},
      {"data.marker_rule", Kind::text},           {"data.marker_size", Kind::integer},
      {"data.noise_std", Kind::real},             {"data.train_samples", Kind::integer},
      {"data.val_samples", Kind::integer},        {"data.seed", Kind::integer},
      {"run.seed", Kind::integer},                {"run.precision", Kind::text},
      {"run.out_dir", Kind::text},                {"run.variants", Kind::text_list},
      {"run.checkpoint", Kind::text},             {"run.eval_scales", Kind::real_list},
      {"visualize.point", Kind::int_list},        {"visualize.channels", Kind::int_list},
      {"visualize.sample", Kind::integer},        {"visualize.image", Kind::text},
  };
  return s;
}

json::json_pointer pointer(const std::string& key) {
  std::string p = "/" + key;
  for (auto& c : p) {
    if (c == '.') c = '/';
  }
  return json::json_pointer(p);
}

bool is_integral(const json& v) {
  if (v.is_number_integer()) return true;
  return v.is_number_float() && std::isfinite(v.get<double>()) && std::floor(v.get<double>()) == v.get<double>();
}

// Coerces `v` to the leaf kind or throws.
json coerce(const std::string& key, Kind kind, const json& v) {
  auto fail = [&](const std::string& want) -> json {
    throw ConfigError(key, "expected " + want + ", got " + v.dump());
  };
  auto as_list = [&](auto&& elem, const std::string& want) -> json {
    if (!v.is_array()) return fail("a list of " + want);
    json out = json::array();
    for (const auto& e : v) out.push_back(elem(e));
    return out;
  };
  auto integer = [&](const json& e) -> json {
    if (!e.is_number() || !is_integral(e)) fail("an integer");
    return static_cast<std::int64_t>(e.get<double>());
  };
  auto real = [&](const json& e) -> json {
    if (!e.is_number()) fail("a number");
    return e.get<double>();
  };
  auto text = [&](const json& e) -> json {
    if (!e.is_string()) fail("a string");
    return e;
  };
  switch (kind) {
    case Kind::integer: return integer(v);
    case Kind::real: return real(v);
    case Kind::boolean:
      if (!v.is_boolean()) return fail("true or false");
      return v;
    case Kind::text: return text(v);
    case Kind::int_list: return as_list(integer, "integers");
    case Kind::real_list: return as_list(real, "numbers");
    case Kind::text_list: return as_list(text, "strings");
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(std::string text) {
  text = trim(text);
  if (text.size() >= 2 && text.front() == '[' && text.back() == ']') text = text.substr(1, text.size() - 2);
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

json parse_scalar(const std::string& key, Kind kind, const std::string& text) {
  const auto t = trim(text);
  try {
    switch (kind) {
      case Kind::integer:
      case Kind::int_list: {
        size_t used = 0;
        const auto v = std::stoll(t, &used);
        if (used != t.size()) break;
        return v;
      }
      case Kind::real:
      case Kind::real_list: {
        size_t used = 0;
        const auto v = std::stod(t, &used);
        if (used != t.size()) break;
        return v;
      }
      case Kind::boolean:
        if (t == "true" || t == "1") return true;
        if (t == "false" || t == "0") return false;
        break;
      case Kind::text:
      case Kind::text_list:
        if (t.size() >= 2 && t.front() == '"' && t.back() == '"') return t.substr(1, t.size() - 2);
        return t;
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key, "cannot parse '" + text + "'");
}

void collect_leaves(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) collect_leaves(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.emplace_back(prefix, node);
  }
}

}  // namespace

std::string source_name(Source s) {
  switch (s) {
    case Source::default_value: return "default";
    case Source::file: return "file";
    case Source::flag: return "flag";
  }
  return "default";
}

RunConfig::RunConfig() {
  const ModelConfig m;
  const TrainConfig t;
  const DataConfig d;
  doc_["model"] = json::parse(to_json(m));
  doc_["train"] = {{"base_lr", t.base_lr},       {"poly_power", t.poly_power}, {"momentum", t.momentum},
                   {"weight_decay", t.weight_decay}, {"epochs", t.epochs},    {"batch_size", t.batch_size},
                   {"aux_weight", t.aux_weight}, {"seeds", t.seeds},           {"crop_h", t.crop_h},
                   {"crop_w", t.crop_w},         {"flip_prob", t.flip_prob},   {"scale_aug", t.scale_aug},
                   {"scales", t.scales},         {"eval_batch", t.eval_batch}};
  doc_["data"] = {{"height", d.scene.height},
                  {"width", d.scene.width},
                  {"num_classes", d.scene.num_classes},
                  {"min_shapes", d.scene.min_shapes},
                  {"max_shapes", d.scene.max_shapes},
                  {"marker_rule", d.scene.marker_rule == MarkerRule::none ? "none" : "corner_color"},
                  {"marker_size", d.scene.marker_size},
                  {"noise_std", d.scene.noise_std},
                  {"train_samples", d.train_samples},
                  {"val_samples", d.val_samples},
                  {"seed", d.seed}};
  doc_["run"] = {{"seed", 0},
                 {"precision", "f32"},
                 {"out_dir", ""},
                 {"variants", {"baseline", "pam", "cam", "dual"}},
                 {"checkpoint", ""},
                 {"eval_scales", {1.0}}};
  doc_["visualize"] = {{"point", {0, 0}}, {"channels", {0}}, {"sample", 0}, {"image", ""}};
  for (const auto& [key, kind] : schema()) {
    doc_[pointer(key)] = coerce(key, kind, doc_.at(pointer(key)));
    sources_[key] = Source::default_value;
  }
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", "'" + path + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config", "'" + path + "' must hold a JSON object");
  merge_json(doc, Source::file);
}

void RunConfig::merge_json(const json& doc, Source source) {
  std::vector<std::pair<std::string, json>> leaves;
  collect_leaves(doc, "", leaves);
  for (const auto& [key, value] : leaves) {
    const auto it = schema().find(key);
    if (it == schema().end()) throw ConfigError(key, "unknown configuration key");
    doc_[pointer(key)] = coerce(key, it->second, value);
    sources_[key] = source;
  }
}

void RunConfig::set(const std::string& key, const std::string& value, Source source) {
  const auto it = schema().find(key);
  if (it == schema().end()) throw ConfigError(key, "unknown configuration key");
  const Kind kind = it->second;
  json v;
  if (kind == Kind::int_list || kind == Kind::real_list || kind == Kind::text_list) {
    v = json::array();
    for (const auto& item : split_list(value)) v.push_back(parse_scalar(key, kind, item));
  } else {
    v = parse_scalar(key, kind, value);
  }
  doc_[pointer(key)] = coerce(key, kind, v);
  sources_[key] = source;
}

bool RunConfig::has(const std::string& key) const { return schema().count(key) > 0; }

const json& RunConfig::get(const std::string& key) const {
  if (!has(key)) throw ConfigError(key, "unknown configuration key");
  return doc_.at(pointer(key));
}

Source RunConfig::source(const std::string& key) const {
  const auto it = sources_.find(key);
  if (it == sources_.end()) throw ConfigError(key, "unknown configuration key");
  return it->second;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, kind] : schema()) out.push_back(k);
  return out;
}

ModelConfig RunConfig::model() const {
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(doc_.at("model").dump());
  } catch (const ConfigError& e) {
    if (e.key() == "variant") throw ConfigError("model.variant", e.what());
    throw;
  }
  return cfg;
}

TrainConfig RunConfig::train() const {
  const auto& j = doc_.at("train");
  TrainConfig t;
  t.base_lr = j.at("base_lr").get<double>();
  t.poly_power = j.at("poly_power").get<double>();
  t.momentum = j.at("momentum").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.epochs = j.at("epochs").get<std::int64_t>();
  t.batch_size = j.at("batch_size").get<std::int64_t>();
  t.aux_weight = j.at("aux_weight").get<double>();
  t.seeds.clear();
  for (const auto& s : j.at("seeds")) {
    if (s.get<std::int64_t>() < 0) throw ConfigError("train.seeds", "seeds must be >= 0");
    t.seeds.push_back(s.get<std::uint64_t>());
  }
  t.crop_h = j.at("crop_h").get<std::int64_t>();
  t.crop_w = j.at("crop_w").get<std::int64_t>();
  t.flip_prob = j.at("flip_prob").get<double>();
  t.scale_aug = j.at("scale_aug").get<bool>();
  t.scales = j.at("scales").get<std::vector<double>>();
  t.eval_batch = j.at("eval_batch").get<std::int64_t>();
  t.validate();
  return t;
}

DataConfig RunConfig::data() const {
  const auto& j = doc_.at("data");
  DataConfig d;
  d.scene.height = j.at("height").get<std::int64_t>();
  d.scene.width = j.at("width").get<std::int64_t>();
  d.scene.num_classes = j.at("num_classes").get<std::int64_t>();
  d.scene.min_shapes = j.at("min_shapes").get<std::int64_t>();
  d.scene.max_shapes = j.at("max_shapes").get<std::int64_t>();
  const auto rule = j.at("marker_rule").get<std::string>();
  if (rule == "corner_color") {
    d.scene.marker_rule = MarkerRule::corner_color;
  } else if (rule == "none") {
    d.scene.marker_rule = MarkerRule::none;
  } else {
    throw ConfigError("data.marker_rule", "expected corner_color or none, got '" + rule + "'");
  }
  d.scene.marker_size = j.at("marker_size").get<std::int64_t>();
  d.scene.noise_std = j.at("noise_std").get<double>();
  d.train_samples = j.at("train_samples").get<std::int64_t>();
  d.val_samples = j.at("val_samples").get<std::int64_t>();
  if (j.at("seed").get<std::int64_t>() < 0) throw ConfigError("data.seed", "must be >= 0");
  d.seed = j.at("seed").get<std::uint64_t>();
  d.validate();
  return d;
}

std::vector<double> parse_number_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(parse_scalar(key, Kind::real, item).get<double>());
  if (out.empty()) throw ConfigError(key, "needs at least one value");
  return out;
}

std::pair<std::int64_t, std::int64_t> parse_point(const std::string& key, const std::string& text) {
  const auto parts = split_list(text);
  if (parts.size() != 2) throw ConfigError(key, "expected R,C but got '" + text + "'");
  return {parse_scalar(key, Kind::integer, parts[0]).get<std::int64_t>(),
          parse_scalar(key, Kind::integer, parts[1]).get<std::int64_t>()};
}

}  // namespace danet
