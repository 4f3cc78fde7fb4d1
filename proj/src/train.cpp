// SPDX-License-Identifier: Apache-2.0
#include "danet/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "danet/errors.hpp"
#include "danet/io.hpp"

namespace danet {

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("train.base_lr", "must be > 0");
  if (!(poly_power > 0)) throw ConfigError("train.poly_power", "must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay", "must be >= 0");
  if (epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(aux_weight >= 0)) throw ConfigError("train.aux_weight", "must be >= 0");
  if (seeds.empty()) throw ConfigError("train.seeds", "needs at least one seed");
  if (crop_h < 8 || crop_h % 8) throw ConfigError("train.crop_h", "must be a positive multiple of 8");
  if (crop_w < 8 || crop_w % 8) throw ConfigError("train.crop_w", "must be a positive multiple of 8");
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("train.flip_prob", "must lie in [0, 1]");
  if (scales.empty()) throw ConfigError("train.scales", "needs at least one scale");
  for (double s : scales) {
    if (!(s > 0) || !std::isfinite(s)) throw ConfigError("train.scales", "scales must be > 0");
  }
  if (eval_batch < 1) throw ConfigError("train.eval_batch", "must be >= 1");
}

void DataConfig::validate() const {
  scene.validate();
  if (train_samples < 1) throw ConfigError("data.train_samples", "must be >= 1");
  if (val_samples < 0) throw ConfigError("data.val_samples", "must be >= 0");
}

double poly_lr(std::int64_t iter, std::int64_t total_iter, double base_lr, double power) {
  if (total_iter < 1 || iter < 0 || iter > total_iter) {
    throw ContractError("poly_lr: iter " + std::to_string(iter) + " outside [0, " + std::to_string(total_iter) + "]");
  }
  if (iter == total_iter) return 0.0;
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iter), power);
}

template <typename T>
void sgd_step(Tensor<T>& param, std::span<const T> grad, std::vector<T>& velocity, double lr, double momentum,
              double weight_decay) {
  const auto n = static_cast<size_t>(param.numel());
  if (grad.size() != n || velocity.size() != n) {
    throw DimensionError("sgd_step: parameter " + shape_str(param.shape()) + " has " + std::to_string(n) +
                         " values but grad has " + std::to_string(grad.size()) + " and velocity " +
                         std::to_string(velocity.size()));
  }
  auto p = param.data();
  const T m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), rate = static_cast<T>(lr);
  for (size_t i = 0; i < n; ++i) {
    velocity[i] = m * velocity[i] + grad[i] + wd * p[i];
    p[i] -= rate * velocity[i];
  }
}

template <typename T>
Sgd<T>::Sgd(std::vector<NamedTensor<T>> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(static_cast<size_t>(p.tensor.numel()), T(0));
}

template <typename T>
void Sgd<T>::step(double lr) {
  std::vector<T> zeros;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    std::span<const T> g = t.grad();
    if (!t.has_grad()) {
      zeros.assign(static_cast<size_t>(t.numel()), T(0));
      g = zeros;
    }
    sgd_step(t, g, velocity_[i], lr, momentum_, weight_decay_);
  }
}

ConfusionMatrix::ConfusionMatrix(std::int64_t num_classes, std::int32_t ignore_index)
    : k_(num_classes), ignore_(ignore_index), counts_(static_cast<size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ContractError("ConfusionMatrix: need at least one class");
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& labels) {
  if (pred.ids.size() != labels.ids.size()) {
    throw DimensionError("ConfusionMatrix: prediction and label maps differ in size");
  }
  auto valid = [&](std::int32_t id) { return id >= 0 && id < k_; };
  for (size_t i = 0; i < labels.ids.size(); ++i) {
    const auto t = labels.ids[i], p = pred.ids[i];
    if (t == ignore_) continue;
    if (!valid(t)) throw ContractError("ConfusionMatrix: invalid label id " + std::to_string(t));
    if (!valid(p)) throw ContractError("ConfusionMatrix: invalid predicted id " + std::to_string(p));
    ++counts_[static_cast<size_t>(t * k_ + p)];
  }
}

EvalReport ConfusionMatrix::report() const {
  EvalReport r;
  r.num_classes = k_;
  r.confusion = counts_;
  std::int64_t total = 0, correct = 0;
  double iou_sum = 0;
  std::int64_t present = 0;
  for (std::int64_t c = 0; c < k_; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::int64_t o = 0; o < k_; ++o) {
      row += r.at(c, o);
      col += r.at(o, c);
    }
    const auto tp = r.at(c, c);
    const auto denom = row + col - tp;  // TP + FN + FP
    total += row;
    correct += tp;
    if (denom > 0) {
      const double iou = static_cast<double>(tp) / static_cast<double>(denom);
      r.per_class_iou.push_back(iou);
      r.present.push_back(true);
      iou_sum += iou;
      ++present;
    } else {
      r.per_class_iou.push_back(std::numeric_limits<double>::quiet_NaN());
      r.present.push_back(false);
    }
  }
  r.mean_iou = present ? iou_sum / static_cast<double>(present) : 0.0;
  r.pixel_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return r;
}

EvalReport mean_iou(const LabelMap& pred, const LabelMap& labels, std::int64_t num_classes, std::int32_t ignore_index) {
  ConfusionMatrix cm(num_classes, ignore_index);
  cm.add(pred, labels);
  return cm.report();
}

template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores) {
  if (scores.dim() != 4) throw DimensionError("argmax_labels: expected NCHW, got " + shape_str(scores.shape()));
  const auto n = scores.size(0), k = scores.size(1), h = scores.size(2), w = scores.size(3);
  const auto hw = h * w;
  LabelMap out(n, h, w);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t p = 0; p < hw; ++p) {
      std::int32_t best = 0;
      T best_v = scores[(b * k) * hw + p];
      for (std::int64_t c = 1; c < k; ++c) {
        const T v = scores[(b * k + c) * hw + p];
        if (v > best_v) {
          best_v = v;
          best = static_cast<std::int32_t>(c);
        }
      }
      out.ids[static_cast<size_t>(b * hw + p)] = best;
    }
  }
  return out;
}

template <typename T>
Tensor<T> channel_softmax(const Tensor<T>& logits) {
  if (logits.dim() != 4) throw DimensionError("channel_softmax: expected NCHW, got " + shape_str(logits.shape()));
  const auto n = logits.size(0), k = logits.size(1), hw = logits.size(2) * logits.size(3);
  std::vector<T> out(static_cast<size_t>(logits.numel()));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t p = 0; p < hw; ++p) {
      T hi = logits[(b * k) * hw + p];
      for (std::int64_t c = 1; c < k; ++c) hi = std::max(hi, logits[(b * k + c) * hw + p]);
      T total = 0;
      for (std::int64_t c = 0; c < k; ++c) {
        const auto i = static_cast<size_t>((b * k + c) * hw + p);
        out[i] = std::exp(logits[static_cast<std::int64_t>(i)] - hi);
        total += out[i];
      }
      for (std::int64_t c = 0; c < k; ++c) out[static_cast<size_t>((b * k + c) * hw + p)] /= total;
    }
  }
  return Tensor<T>(logits.shape(), std::move(out));
}

namespace {

std::int64_t round_up8(std::int64_t v) { return (v + 7) / 8 * 8; }

// Mirror padding on the bottom/right edges (edge pixel not repeated).
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (out_h == h && out_w == w) return x;
  if (out_h - h >= h || out_w - w >= w) {
    throw DimensionError("reflect_pad: " + std::to_string(h) + "x" + std::to_string(w) + " is too small to pad to " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  auto mirror = [](std::int64_t i, std::int64_t len) { return i < len ? i : 2 * (len - 1) - i; };
  std::vector<T> out(static_cast<size_t>(n * c * out_h * out_w));
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t y = 0; y < out_h; ++y) {
      for (std::int64_t xx = 0; xx < out_w; ++xx) {
        out[static_cast<size_t>((p * out_h + y) * out_w + xx)] = x[(p * h + mirror(y, h)) * w + mirror(xx, w)];
      }
    }
  }
  return Tensor<T>({n, c, out_h, out_w}, std::move(out));
}

template <typename T>
Tensor<T> crop_top_left(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (out_h == h && out_w == w) return x;
  std::vector<T> out(static_cast<size_t>(n * c * out_h * out_w));
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t y = 0; y < out_h; ++y) {
      for (std::int64_t xx = 0; xx < out_w; ++xx) {
        out[static_cast<size_t>((p * out_h + y) * out_w + xx)] = x[(p * h + y) * w + xx];
      }
    }
  }
  return Tensor<T>({n, c, out_h, out_w}, std::move(out));
}

}  // namespace

template <typename T>
Tensor<T> multi_scale_inference(Model<T>& model, const Tensor<T>& images, const std::vector<double>& scales) {
  if (scales.empty()) throw ContractError("multi_scale_inference: empty scale list");
  if (images.dim() != 4) throw DimensionError("multi_scale_inference: expected NCHW, got " + shape_str(images.shape()));
  NoGradGuard guard;
  const auto h = images.size(2), w = images.size(3);
  std::vector<T> acc;
  Shape out_shape;
  for (double s : scales) {
    if (!(s > 0) || !std::isfinite(s)) throw ContractError("multi_scale_inference: scales must be > 0");
    const auto sh = std::max<std::int64_t>(1, std::llround(static_cast<double>(h) * s));
    const auto sw = std::max<std::int64_t>(1, std::llround(static_cast<double>(w) * s));
    const Tensor<T> resized = (sh == h && sw == w) ? images : upsample_bilinear(images, sh, sw);
    const Tensor<T> padded = reflect_pad(resized, round_up8(sh), round_up8(sw));
    const auto out = model.forward(padded, {});
    const Tensor<T> prob = channel_softmax(crop_top_left(out.main_logits, sh, sw));
    const Tensor<T> full = (sh == h && sw == w) ? prob : upsample_bilinear(prob, h, w);
    if (acc.empty()) {
      acc.assign(static_cast<size_t>(full.numel()), T(0));
      out_shape = full.shape();
    }
    const auto fv = full.data();
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += fv[i];
  }
  const T inv = T(1) / static_cast<T>(scales.size());
  if (scales.size() > 1) {
    for (auto& v : acc) v *= inv;
  }
  return Tensor<T>(out_shape, std::move(acc));
}

template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<SegSample>& samples, std::int64_t batch_size,
                    const std::vector<double>& scales) {
  ConfusionMatrix cm(model.config().num_classes);
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    const auto end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
    const std::vector<SegSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                       samples.begin() + static_cast<std::ptrdiff_t>(end));
    auto [images, labels] = make_batch<T>(chunk);
    cm.add(argmax_labels(multi_scale_inference(model, images, scales)), labels);
  }
  return cm.report();
}

namespace {

void check_finite_loss(double loss, std::int64_t step) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(step, "training diverged: non-finite loss " + io::format_double(loss) + " at step " +
                                    std::to_string(step));
  }
}

// Scale factors whose result still fits the crop.
std::vector<double> usable_scales(const TrainConfig& cfg, const SegSample& s) {
  std::vector<double> out;
  for (double f : cfg.scales) {
    if (std::llround(static_cast<double>(s.height) * f) >= cfg.crop_h &&
        std::llround(static_cast<double>(s.width) * f) >= cfg.crop_w) {
      out.push_back(f);
    }
  }
  return out;
}

}  // namespace

template <typename T>
TrainHistory train(Model<T>& model, const std::vector<SegSample>& train_set, const std::vector<SegSample>& val_set,
                   const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  TrainHistory history;
  const auto n = static_cast<std::int64_t>(train_set.size());
  if (cfg.epochs > 0 && n == 0) throw ContractError("train: empty training set");
  const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total = cfg.epochs * steps_per_epoch;

  const Rng root(opts.seed);
  const Rng shuffle_root = root.split(101), augment_root = root.split(102);
  Sgd<T> opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  std::int64_t step = 0;
  bool stop = false;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::vector<std::int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    for (std::int64_t i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle.uniform_int(0, i))]);

    double loss_sum = 0, lr = 0;
    std::int64_t batches = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      if (opts.max_steps >= 0 && step >= opts.max_steps) {
        stop = true;
        break;
      }
      std::vector<SegSample> batch;
      for (std::int64_t j = start; j < std::min(n, start + cfg.batch_size); ++j) {
        Rng rng = augment_root.split(static_cast<std::uint64_t>(step * cfg.batch_size + (j - start)));
        const SegSample* src = &train_set[static_cast<size_t>(order[static_cast<size_t>(j)])];
        SegSample scaled;
        if (cfg.scale_aug) {
          const auto options = usable_scales(cfg, *src);
          if (!options.empty()) {
            const double f = options[static_cast<size_t>(rng.uniform_int(0, static_cast<std::int64_t>(options.size()) - 1))];
            scaled = scale_augment(*src, f, {cfg.crop_h, cfg.crop_w});
            src = &scaled;
          }
        }
        batch.push_back(augment(*src, {cfg.crop_h, cfg.crop_w}, cfg.flip_prob, rng));
      }
      auto [images, labels] = make_batch<T>(batch);
      lr = poly_lr(step, total, cfg.base_lr, cfg.poly_power);
      model.zero_grad();
      Tensor<T> loss;
      try {
        loss = multi_loss(model.forward(images, {.training = true}), labels, cfg.aux_weight);
      } catch (const NumericError& e) {
        throw DivergenceError(step, "training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      const double value = static_cast<double>(loss.item());
      check_finite_loss(value, step);
      backward(loss);
      opt.step(lr);
      history.step_losses.push_back(value);
      loss_sum += value;
      ++batches;
      ++step;
    }
    if (batches == 0) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    if (!val_set.empty()) {
      const auto report = evaluate(model, val_set, cfg.eval_batch);
      rec.val_miou = report.mean_iou;
      rec.per_class_iou = report.per_class_iou;
    } else {
      rec.val_miou = std::numeric_limits<double>::quiet_NaN();
    }
    history.epochs.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  model.zero_grad();

  if (!opts.checkpoint_path.empty()) save_model(model, opts.checkpoint_path);
  if (!opts.metrics_path.empty()) io::write_file(opts.metrics_path, metrics_csv(history, model.config().num_classes));
  return history;
}

std::string metrics_csv(const TrainHistory& history, std::int64_t num_classes) {
  std::vector<std::string> header{"epoch", "lr", "train_loss", "val_miou"};
  for (std::int64_t c = 0; c < num_classes; ++c) header.push_back("iou_" + std::to_string(c));
  std::string text = io::csv_row(header);
  for (const auto& e : history.epochs) {
    std::vector<std::string> row{std::to_string(e.epoch), io::format_double(e.lr), io::format_double(e.train_loss),
                                 io::format_double(e.val_miou)};
    for (std::int64_t c = 0; c < num_classes; ++c) {
      const auto i = static_cast<size_t>(c);
      row.push_back(i < e.per_class_iou.size() && std::isfinite(e.per_class_iou[i]) ? io::format_double(e.per_class_iou[i])
                                                                                   : "");
    }
    text += io::csv_row(row);
  }
  return text;
}

template <typename T>
std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& entries, const DataConfig& data,
                                      const std::function<void(const std::string&, std::uint64_t, double)>& on_run) {
  if (entries.empty()) throw ContractError("run_ablation: no variants requested");
  data.validate();
  const auto train_set = generate_dataset(data.scene, data.train_samples, data.seed);
  const auto val_set = generate_dataset(data.scene, data.val_samples, data.seed + 1);
  std::vector<AblationRow> rows;
  for (const auto& entry : entries) {
    entry.train.validate();
    AblationRow row;
    row.variant = variant_name(entry.model.variant);
    for (auto seed : entry.train.seeds) {
      Model<T> model(entry.model, seed);
      TrainOptions opts;
      opts.seed = seed;
      const auto history = train(model, train_set, val_set, entry.train, opts);
      const double miou = history.epochs.empty() ? evaluate(model, val_set, entry.train.eval_batch).mean_iou
                                                 : history.epochs.back().val_miou;
      row.seeds.push_back(seed);
      row.miou.push_back(miou);
      if (on_run) on_run(row.variant, seed, miou);
    }
    const double count = static_cast<double>(row.miou.size());
    row.mean = std::accumulate(row.miou.begin(), row.miou.end(), 0.0) / count;
    double ss = 0;
    for (double v : row.miou) ss += (v - row.mean) * (v - row.mean);
    row.stddev = row.miou.size() > 1 ? std::sqrt(ss / (count - 1)) : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string text = io::csv_row({"variant", "mean_miou", "std_miou", "seeds", "per_seed_miou"});
  for (const auto& r : rows) {
    std::string seeds, per_seed;
    for (size_t i = 0; i < r.miou.size(); ++i) {
      if (i) {
        seeds += ';';
        per_seed += ';';
      }
      seeds += std::to_string(r.seeds[i]);
      per_seed += io::format_double(r.miou[i]);
    }
    text += io::csv_row({r.variant, io::format_double(r.mean), io::format_double(r.stddev), seeds, per_seed});
  }
  return text;
}

#define DANET_INSTANTIATE(T)                                                                                  \
  template void sgd_step(Tensor<T>&, std::span<const T>, std::vector<T>&, double, double, double);           \
  template class Sgd<T>;                                                                                      \
  template LabelMap argmax_labels(const Tensor<T>&);                                                          \
  template Tensor<T> channel_softmax(const Tensor<T>&);                                                       \
  template Tensor<T> multi_scale_inference(Model<T>&, const Tensor<T>&, const std::vector<double>&);          \
  template EvalReport evaluate(Model<T>&, const std::vector<SegSample>&, std::int64_t,                        \
                               const std::vector<double>&);                                                   \
  template TrainHistory train(Model<T>&, const std::vector<SegSample>&, const std::vector<SegSample>&,        \
                              const TrainConfig&, const TrainOptions&);                                       \
  template std::vector<AblationRow> run_ablation<T>(                                                          \
      const std::vector<AblationEntry>&, const DataConfig&,                                                   \
      const std::function<void(const std::string&, std::uint64_t, double)>&);

DANET_INSTANTIATE(float)
DANET_INSTANTIATE(double)
#undef DANET_INSTANTIATE

}  // namespace danet
