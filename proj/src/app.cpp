// SPDX-License-Identifier: Apache-2.0
#include "danet/app.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "danet/config.hpp"
#include "danet/errors.hpp"
#include "danet/io.hpp"
#include "danet/tensor.hpp"
#include "danet/train.hpp"
#include "danet/verify.hpp"

namespace danet {

namespace {

namespace fs = std::filesystem;

// Flags shared by every command. Empty strings mean "not given".
struct Flags {
  std::string config, out_dir, seed, precision, variant, scales, point, channels, epochs;
  std::string checkpoint, image, sample;
  bool dry_run = false;
  int trials = 8;
  std::string fault;
};

struct Context {
  RunConfig cfg;
  std::string out_dir;
  std::ostream& out;
  std::ostream& err;
};

std::string resolve_out_dir(const RunConfig& cfg) {
  auto dir = cfg.get("run.out_dir").get<std::string>();
  if (dir.empty()) {
    const char* env = std::getenv(kOutDirEnv);
    dir = env && *env ? env : kDefaultOutDir;
  }
  return dir;
}

// Dotted overrides arrive as "--a.b value" or "--a.b=value".
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& extras) {
  for (size_t i = 0; i < extras.size(); ++i) {
    const auto& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2) throw ConfigError("", "unexpected argument '" + arg + "'");
    auto key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError(key, "missing value");
      value = extras[++i];
    }
    if (key.find('.') == std::string::npos || !cfg.has(key)) throw ConfigError(key, "unknown option or configuration key");
    cfg.set(key, value);
  }
}

RunConfig build_config(const Flags& f, const std::vector<std::string>& extras, const std::string& command) {
  RunConfig cfg;
  if (!f.config.empty()) cfg.merge_file(f.config);
  apply_overrides(cfg, extras);
  const auto set_if = [&](const std::string& key, const std::string& v) {
    if (!v.empty()) cfg.set(key, v);
  };
  set_if("run.out_dir", f.out_dir);
  set_if("run.seed", f.seed);
  set_if("run.precision", f.precision);
  set_if("run.eval_scales", f.scales);
  set_if("visualize.point", f.point);
  set_if("visualize.channels", f.channels);
  set_if("train.epochs", f.epochs);
  set_if("run.checkpoint", f.checkpoint);
  set_if("visualize.image", f.image);
  set_if("visualize.sample", f.sample);
  if (!f.variant.empty()) {
    parse_variant(f.variant);
    cfg.set(command == "ablate" ? "run.variants" : "model.variant", f.variant);
  }
  const auto precision = cfg.get("run.precision").get<std::string>();
  if (precision != "f32" && precision != "f64") {
    throw ConfigError("run.precision", "expected f32 or f64, got '" + precision + "'");
  }
  if (cfg.model().num_classes != cfg.data().scene.num_classes) {
    throw ConfigError("model.num_classes", "must equal data.num_classes");
  }
  return cfg;
}

std::uint64_t run_seed(const RunConfig& cfg) {
  const auto s = cfg.get("run.seed").get<std::int64_t>();
  if (s < 0) throw ConfigError("run.seed", "must be >= 0");
  return static_cast<std::uint64_t>(s);
}

std::vector<double> eval_scales(const RunConfig& cfg) {
  auto s = cfg.get("run.eval_scales").get<std::vector<double>>();
  if (s.empty()) throw ConfigError("run.eval_scales", "needs at least one scale");
  for (double v : s) {
    if (!(v > 0)) throw ConfigError("run.eval_scales", "scales must be positive");
  }
  return s;
}

std::vector<SegSample> train_split(const DataConfig& d) { return generate_dataset(d.scene, d.train_samples, d.seed); }
std::vector<SegSample> val_split(const DataConfig& d) { return generate_dataset(d.scene, d.val_samples, d.seed + 1); }

std::string fmt(double v) { return std::isnan(v) ? "" : io::format_double(v); }

std::string short_num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << std::fixed << v;
  return s.str();
}

template <typename T>
int cmd_train(Context& ctx) {
  const auto model_cfg = ctx.cfg.model();
  const auto train_cfg = ctx.cfg.train();
  const auto data = ctx.cfg.data();
  const auto seed = run_seed(ctx.cfg);
  io::ensure_dir(ctx.out_dir);
  io::write_file(ctx.out_dir + "/config.json", ctx.cfg.dump());
  Model<T> model(model_cfg, seed);
  TrainOptions opts;
  opts.seed = seed;
  opts.checkpoint_path = ctx.out_dir + "/model.ckpt";
  opts.metrics_path = ctx.out_dir + "/metrics.csv";
  opts.on_epoch = [&](const EpochRecord& r) {
    ctx.out << "epoch " << r.epoch << " lr " << short_num(r.lr) << " loss " << short_num(r.train_loss)
            << " val_miou " << short_num(r.val_miou) << "\n";
  };
  const auto history = train(model, train_split(data), val_split(data), train_cfg, opts);
  ctx.out << "trained " << variant_name(model_cfg.variant) << " for " << history.epochs.size() << " epochs; wrote "
          << opts.checkpoint_path << " and " << opts.metrics_path << "\n";
  return kExitOk;
}

template <typename T>
int cmd_ablate(Context& ctx) {
  const auto base_model = ctx.cfg.model();
  const auto train_cfg = ctx.cfg.train();
  const auto data = ctx.cfg.data();
  std::vector<AblationEntry> entries;
  for (const auto& name : ctx.cfg.get("run.variants").get<std::vector<std::string>>()) {
    AblationEntry e{base_model, train_cfg};
    try {
      e.model.variant = parse_variant(name);
    } catch (const ConfigError& ex) {
      throw ConfigError("run.variants", ex.what());
    }
    entries.push_back(e);
  }
  if (entries.empty()) throw ConfigError("run.variants", "needs at least one variant");
  io::ensure_dir(ctx.out_dir);
  io::write_file(ctx.out_dir + "/config.json", ctx.cfg.dump());
  const auto rows = run_ablation<T>(entries, data, [&](const std::string& v, std::uint64_t s, double miou) {
    ctx.out << v << " seed " << s << " val_miou " << short_num(miou) << "\n";
  });
  const auto path = ctx.out_dir + "/ablation.csv";
  io::write_file(path, ablation_csv(rows));
  for (const auto& r : rows) {
    ctx.out << r.variant << " mean " << short_num(r.mean) << " std " << short_num(r.stddev) << "\n";
  }
  ctx.out << "wrote " << path << "\n";
  return kExitOk;
}

template <typename T>
Model<T> model_for(Context& ctx) {
  auto path = ctx.cfg.get("run.checkpoint").get<std::string>();
  if (path.empty() && fs::exists(ctx.out_dir + "/model.ckpt")) path = ctx.out_dir + "/model.ckpt";
  if (path.empty()) {
    ctx.err << "note: no checkpoint given, using the initialised model\n";
    return Model<T>(ctx.cfg.model(), run_seed(ctx.cfg));
  }
  try {
    return load_model<T>(path);
  } catch (const std::exception& e) {
    throw ConfigError("run.checkpoint", e.what());
  }
}

template <typename T>
int cmd_eval(Context& ctx) {
  const auto data = ctx.cfg.data();
  const auto train_cfg = ctx.cfg.train();
  const auto scales = eval_scales(ctx.cfg);
  auto model = model_for<T>(ctx);
  if (model.config().num_classes != data.scene.num_classes) {
    throw ConfigError("data.num_classes", "does not match the checkpoint");
  }
  const auto report = evaluate(model, val_split(data), train_cfg.eval_batch, scales);
  std::string csv = io::csv_row({"metric", "value"});
  for (size_t c = 0; c < report.per_class_iou.size(); ++c) {
    csv += io::csv_row({"iou_" + std::to_string(c), fmt(report.per_class_iou[c])});
  }
  csv += io::csv_row({"mean_iou", fmt(report.mean_iou)});
  csv += io::csv_row({"pixel_accuracy", fmt(report.pixel_accuracy)});
  io::ensure_dir(ctx.out_dir);
  const auto path = ctx.out_dir + "/eval.csv";
  io::write_file(path, csv);
  ctx.out << "val_miou " << short_num(report.mean_iou) << " pixel_accuracy " << short_num(report.pixel_accuracy)
          << "; wrote " << path << "\n";
  return kExitOk;
}

// Class ids stretched over [0, 255] for viewing.
std::vector<std::uint8_t> label_gray(const std::vector<std::int32_t>& ids, std::int64_t num_classes) {
  std::vector<std::uint8_t> g(ids.size());
  const double step = num_classes > 1 ? 255.0 / static_cast<double>(num_classes - 1) : 0.0;
  for (size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    g[i] = id < 0 || id >= num_classes ? 255 : static_cast<std::uint8_t>(std::floor(id * step + 0.5));
  }
  return g;
}

template <typename T>
void export_map(const std::string& stem, const Tensor<T>& map) {
  std::vector<double> v(map.data().begin(), map.data().end());
  const auto h = map.size(0), w = map.size(1);
  io::write_matrix_csv(stem + ".csv", h, w, v);
  io::write_pgm(stem + ".pgm", w, h, io::quantize_minmax(v));
}

template <typename T>
int cmd_visualize(Context& ctx) {
  const auto data = ctx.cfg.data();
  auto model = model_for<T>(ctx);
  const auto k = model.config().num_classes;

  SegSample sample;
  bool has_truth = true;
  const auto image_path = ctx.cfg.get("visualize.image").get<std::string>();
  if (!image_path.empty()) {
    io::Image8 img;
    try {
      img = io::read_netpbm(image_path);
    } catch (const std::exception& e) {
      throw ConfigError("visualize.image", e.what());
    }
    if (img.channels != 3) throw ConfigError("visualize.image", "expected a P6 image");
    sample.height = img.height;
    sample.width = img.width;
    sample.image.resize(static_cast<size_t>(3 * img.height * img.width));
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t p = 0; p < img.height * img.width; ++p) {
        sample.image[static_cast<size_t>(c * img.height * img.width + p)] =
            static_cast<float>(img.pixels[static_cast<size_t>(3 * p + c)]) / 255.0f;
      }
    }
    sample.labels.assign(static_cast<size_t>(img.height * img.width), 0);
    has_truth = false;
  } else {
    const auto idx = ctx.cfg.get("visualize.sample").get<std::int64_t>();
    if (idx < 0 || idx >= data.val_samples) {
      throw ConfigError("visualize.sample", "must lie in [0, " + std::to_string(data.val_samples) + ")");
    }
    sample = generate_dataset(data.scene, idx + 1, data.seed + 1).back();
  }
  if (sample.height % 8 != 0 || sample.width % 8 != 0) {
    throw ConfigError(image_path.empty() ? "data.height" : "visualize.image", "extents must be multiples of 8");
  }

  const auto [images, labels] = make_batch<T>({sample});
  ModelOutput<T> out;
  {
    NoGradGuard guard;
    ForwardOptions fo;
    fo.capture_attention = true;
    out = model.forward(images, fo);
  }
  const auto fh = out.feature_h, fw = out.feature_w;
  const auto point = ctx.cfg.get("visualize.point").get<std::vector<std::int64_t>>();
  if (point.size() != 2) throw ConfigError("visualize.point", "expected R,C");
  if (point[0] < 0 || point[0] >= fh || point[1] < 0 || point[1] >= fw) {
    throw ConfigError("visualize.point", "(" + std::to_string(point[0]) + "," + std::to_string(point[1]) +
                                             ") lies outside the " + std::to_string(fh) + "x" + std::to_string(fw) +
                                             " feature map");
  }
  const auto channels = ctx.cfg.get("visualize.channels").get<std::vector<std::int64_t>>();
  if (out.cam_features) {
    const auto c_max = out.cam_features->size(1);
    for (auto c : channels) {
      if (c < 0 || c >= c_max) {
        throw ConfigError("visualize.channels",
                          "channel " + std::to_string(c) + " outside [0, " + std::to_string(c_max) + ")");
      }
    }
  }

  io::ensure_dir(ctx.out_dir);
  const auto dir = ctx.out_dir + "/";
  if (out.spatial) {
    export_map(dir + "sub_attention", sub_attention_map(*out.spatial, {point[0], point[1]}, fh, fw));
    ctx.out << "wrote sub_attention.pgm/.csv for point (" << point[0] << "," << point[1] << ")\n";
  } else {
    ctx.err << "note: variant " << variant_name(model.config().variant) << " has no position attention\n";
  }
  if (out.cam_features) {
    for (auto c : channels) export_map(dir + "channel_" + std::to_string(c), attended_channel_map(*out.cam_features, c));
    ctx.out << "wrote " << channels.size() << " attended channel map(s)\n";
  } else {
    ctx.err << "note: variant " << variant_name(model.config().variant) << " has no channel attention\n";
  }

  const auto pred = argmax_labels(channel_softmax(out.main_logits));
  io::write_pgm(dir + "prediction.pgm", sample.width, sample.height, label_gray(pred.ids, k));
  std::vector<double> pred_ids(pred.ids.begin(), pred.ids.end());
  io::write_matrix_csv(dir + "prediction.csv", sample.height, sample.width, pred_ids);
  if (has_truth) io::write_pgm(dir + "ground_truth.pgm", sample.width, sample.height, label_gray(labels.ids, k));
  ctx.out << "wrote prediction" << (has_truth ? " and ground truth" : "") << " to " << ctx.out_dir << "\n";
  return kExitOk;
}

int cmd_verify(Context& ctx, int trials, const std::string& fault) {
  if (trials < 1) throw ConfigError("trials", "must be >= 1");
  if (!fault.empty()) debug::inject_backward_fault(fault);
  const auto results = run_verification(run_seed(ctx.cfg), trials);
  if (!fault.empty()) debug::clear_backward_fault();
  std::size_t failed = 0;
  for (const auto& r : results) {
    ctx.out << (r.passed ? "PASS " : "FAIL ") << r.name << " worst=" << io::format_double(r.worst)
            << " tol=" << io::format_double(r.tolerance);
    if (!r.passed) {
      ++failed;
      if (!r.detail.empty()) ctx.out << " (" << r.detail << ")";
    }
    ctx.out << "\n";
  }
  ctx.out << results.size() << " properties, " << failed << " failed\n";
  if (const auto suspects = suspect_ops(results); failed > 0 && !suspects.empty()) {
    ctx.out << "suspected backward rule:";
    for (const auto& k : suspects) ctx.out << " " << k;
    ctx.out << "\n";
  }
  return failed == 0 ? kExitOk : kExitVerifyFailed;
}

int cmd_gen_data(Context& ctx) {
  const auto data = ctx.cfg.data();
  const auto train_set = train_split(data), val_set = val_split(data);
  write_dataset(train_set, ctx.out_dir + "/train");
  write_dataset(val_set, ctx.out_dir + "/val");
  ctx.out << "wrote " << train_set.size() << " train and " << val_set.size() << " val samples to " << ctx.out_dir
          << "; marker-blind ceiling on val " << short_num(marker_blind_ceiling(val_set)) << "\n";
  return kExitOk;
}

void print_config(const RunConfig& cfg, std::ostream& out) {
  for (const auto& key : cfg.keys()) {
    out << key << " = " << cfg.get(key).dump() << " (" << source_name(cfg.source(key)) << ")\n";
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual attention segmentation on synthetic scenes", "danet"};
  app.require_subcommand(1);
  Flags f;

  struct Command {
    std::string name, help;
  };
  const std::vector<Command> commands{
      {"train", "train one model; writes model.ckpt, metrics.csv, config.json"},
      {"ablate", "train every variant over the configured seeds; writes ablation.csv"},
      {"eval", "evaluate a checkpoint on the validation split; writes eval.csv"},
      {"visualize", "export attention maps, prediction and ground truth"},
      {"verify", "run the self-check suite; exit 1 on any failure"},
      {"gen-data", "write the synthetic train and val splits as PPM/PGM"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->allow_extras();
    sub->footer("Any configuration key can be set as --section.key VALUE.");
    sub->add_option("--config", f.config, "JSON configuration file");
    sub->add_option("--out-dir", f.out_dir, std::string("output directory (default: $") + kOutDirEnv + " or " +
                                                 kDefaultOutDir + ")");
    sub->add_option("--seed", f.seed, "run seed");
    sub->add_option("--precision", f.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--variant", f.variant, "baseline, pam, cam or dual")
        ->check(CLI::IsMember({"baseline", "pam", "cam", "dual"}));
    sub->add_option("--scales", f.scales, "evaluation scales, e.g. 0.75,1,1.25");
    sub->add_option("--point", f.point, "feature-map position R,C");
    sub->add_option("--channels", f.channels, "attended channels, e.g. 0,3");
    sub->add_option("--epochs", f.epochs, "training epochs");
    sub->add_option("--checkpoint", f.checkpoint, "checkpoint to load");
    sub->add_option("--image", f.image, "P6 image to visualize instead of a validation sample");
    sub->add_option("--sample", f.sample, "validation sample index to visualize");
    sub->add_flag("--dry-run", f.dry_run, "print the resolved configuration with sources and exit");
    if (c.name == "verify") {
      sub->add_option("--trials", f.trials, "random cases per property");
      sub->add_option("--inject-fault", f.fault, "corrupt the backward rule of one op kind")->group("");
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  CLI::App* sub = nullptr;
  for (auto* s : subs) {
    if (s->parsed()) sub = s;
  }
  const auto name = sub->get_name();
  try {
    Context ctx{build_config(f, sub->remaining(), name), "", out, err};
    ctx.out_dir = resolve_out_dir(ctx.cfg);
    if (f.dry_run) {
      print_config(ctx.cfg, out);
      return kExitOk;
    }
    const bool f64 = ctx.cfg.get("run.precision").get<std::string>() == "f64";
    if (name == "train") return f64 ? cmd_train<double>(ctx) : cmd_train<float>(ctx);
    if (name == "ablate") return f64 ? cmd_ablate<double>(ctx) : cmd_ablate<float>(ctx);
    if (name == "eval") return f64 ? cmd_eval<double>(ctx) : cmd_eval<float>(ctx);
    if (name == "visualize") return f64 ? cmd_visualize<double>(ctx) : cmd_visualize<float>(ctx);
    if (name == "verify") return cmd_verify(ctx, f.trials, f.fault);
    return cmd_gen_data(ctx);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace danet
