// SPDX-License-Identifier: Apache-2.0
//
// SGD training with the poly schedule, mIoU evaluation, multi-scale
// inference and the variant ablation runner.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "danet/model.hpp"
#include "danet/synth.hpp"

namespace danet {

struct TrainConfig {
  double base_lr = 0.1;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t epochs = 40;
  std::int64_t batch_size = 8;
  double aux_weight = 0.5;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::int64_t crop_h = 56, crop_w = 56;
  double flip_prob = 0.5;
  /// Random rescaling before cropping; factors that would shrink the image
  /// below the crop are skipped.
  bool scale_aug = false;
  std::vector<double> scales{0.75, 1.0, 1.25};
  std::int64_t eval_batch = 16;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
  SceneConfig scene;
  std::int64_t train_samples = 512;
  std::int64_t val_samples = 128;
  std::uint64_t seed = 2024;

  void validate() const;
};

/// base_lr · (1 − iter/total_iter)^power; iter outside [0, total_iter] is a
/// ContractError.
double poly_lr(std::int64_t iter, std::int64_t total_iter, double base_lr, double power);

/// v ← momentum·v + grad + weight_decay·param; param ← param − lr·v.
template <typename T>
void sgd_step(Tensor<T>& param, std::span<const T> grad, std::vector<T>& velocity, double lr, double momentum,
              double weight_decay);

template <typename T>
class Sgd {
 public:
  Sgd(std::vector<NamedTensor<T>> params, double momentum, double weight_decay);
  /// Applies one update using each parameter's accumulated gradient; a
  /// parameter without a gradient is treated as having a zero gradient.
  void step(double lr);
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  std::vector<NamedTensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double momentum_, weight_decay_;
};

struct EvalReport {
  std::int64_t num_classes = 0;
  /// NaN for classes absent from both prediction and ground truth.
  std::vector<double> per_class_iou;
  std::vector<bool> present;
  double mean_iou = 0;
  double pixel_accuracy = 0;
  /// Row = ground truth, column = prediction, k×k row-major.
  std::vector<std::int64_t> confusion;

  std::int64_t at(std::int64_t truth, std::int64_t pred) const {
    return confusion[static_cast<size_t>(truth * num_classes + pred)];
  }
};

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t num_classes, std::int32_t ignore_index = kIgnoreIndex);
  /// Throws ContractError on ids outside [0, k) other than ignore_index.
  void add(const LabelMap& pred, const LabelMap& labels);
  EvalReport report() const;

 private:
  std::int64_t k_;
  std::int32_t ignore_;
  std::vector<std::int64_t> counts_;
};

EvalReport mean_iou(const LabelMap& pred, const LabelMap& labels, std::int64_t num_classes,
                    std::int32_t ignore_index = kIgnoreIndex);

/// Channel argmax of [n × k × H × W] scores.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores);

/// Softmax over the channel axis of [n × k × H × W] logits.
template <typename T>
Tensor<T> channel_softmax(const Tensor<T>& logits);

/// Mean over scales of resized softmax maps. Each rescaled input is padded by
/// reflection to a multiple of 8 and the logits are cropped back.
template <typename T>
Tensor<T> multi_scale_inference(Model<T>& model, const Tensor<T>& images, const std::vector<double>& scales);

/// Single-scale evaluation of the main head over `samples`.
template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<SegSample>& samples, std::int64_t batch_size,
                    const std::vector<double>& scales = {1.0});

struct EpochRecord {
  std::int64_t epoch = 0;
  double lr = 0;  // rate used for the epoch's last step
  double train_loss = 0;
  double val_miou = 0;
  std::vector<double> per_class_iou;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  std::string checkpoint_path;  // empty: no checkpoint
  std::string metrics_path;     // empty: no CSV
  std::function<void(const EpochRecord&)> on_epoch;
  /// Stops after this many optimizer steps (< 0: no limit). The schedule is
  /// still laid out over the full run.
  std::int64_t max_steps = -1;
};

/// Throws DivergenceError at the first non-finite loss.
template <typename T>
TrainHistory train(Model<T>& model, const std::vector<SegSample>& train_set, const std::vector<SegSample>& val_set,
                   const TrainConfig& cfg, const TrainOptions& opts = {});

/// Header: epoch,lr,train_loss,val_miou,iou_0..iou_{k-1}; absent classes
/// leave their IoU cell empty.
std::string metrics_csv(const TrainHistory& history, std::int64_t num_classes);

struct AblationRow {
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::vector<double> miou;
  double mean = 0;
  double stddev = 0;  // sample standard deviation, 0 for one seed
};

struct AblationEntry {
  ModelConfig model;
  TrainConfig train;
};

/// Trains every entry once per seed of its TrainConfig on one shared
/// dataset; rows follow the entry order.
template <typename T>
std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& entries, const DataConfig& data,
                                      const std::function<void(const std::string& variant, std::uint64_t seed,
                                                               double miou)>& on_run = {});

/// Header: variant,mean_miou,std_miou,seeds,per_seed_miou (';'-separated).
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace danet
