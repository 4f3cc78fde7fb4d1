// SPDX-License-Identifier: Apache-2.0
//
// Segmentation network: a dilated conv backbone at output stride 8, position
// and/or channel attention branches, sum fusion, and upsampled logits.
//
//   baseline  backbone → fcn.stem → fcn.post → head.out
//   pam       backbone → pam.stem → PAM → pam.post → head.out
//   cam       backbone → cam.stem → CAM → cam.post → head.out
//   dual      backbone → {pam, cam} branches → sum → head.out,
//             plus aux.pam / aux.cam heads on each branch for the multi-loss
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "danet/attention.hpp"
#include "danet/nn.hpp"

namespace danet {

enum class Variant { baseline_fcn, pam_only, cam_only, dual };

/// "baseline", "pam", "cam", "dual".
std::string variant_name(Variant v);
/// Accepts the short names above and baseline_fcn / pam_only / cam_only.
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::int64_t num_classes = 6;
  // The defaults keep the receptive field of backbone plus head below the
  // marker-to-region distance of the synthetic scenes, so only the attention
  // modules can relate the two.
  std::vector<std::int64_t> backbone_channels{16, 32, 64, 64};
  std::int64_t module_channels = 32;
  std::int64_t reduction_ratio = 8;
  /// Dilation of every conv in each of the four stages. Stages 1-2 must stay
  /// at 1 because they downsample.
  std::vector<std::int64_t> stage_dilations{1, 1, 1, 1};
  std::int64_t blocks_per_stage = 1;
  /// Kernel of the stem and post convs around each attention module.
  std::int64_t branch_kernel = 1;
  /// Dilations for the convs of the last stage; empty keeps
  /// blocks_per_stage convs at stage_dilations[3].
  std::vector<std::int64_t> multi_grid;
  Variant variant = Variant::dual;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// JSON text for checkpoint metadata.
std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

template <typename T>
struct ModelOutput {
  Tensor<T> main_logits;               // [n × k × H × W]
  std::vector<Tensor<T>> aux_logits;   // dual only: PAM head, CAM head
  std::optional<AttentionMap<T>> spatial;  // captured on request
  std::optional<AttentionMap<T>> channel;
  std::optional<Tensor<T>> cam_features;  // CAM output E, for channel maps
  std::int64_t feature_h = 0, feature_w = 0;
};

struct ForwardOptions {
  bool training = false;
  bool capture_attention = false;
  /// Skips the attention operators, feeding each stem straight into its
  /// post conv. Only for checking the identity-at-initialisation property.
  bool bypass_attention = false;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  ModelOutput<T> forward(const Tensor<T>& images, const ForwardOptions& opts = {});

  /// Backbone features at 1/8 resolution.
  Tensor<T> backbone(const Tensor<T>& images, bool training);

  /// Trainable tensors in a fixed order with dotted names.
  std::vector<NamedTensor<T>> parameters() const;
  /// Batch-norm running statistics.
  std::vector<NamedTensor<T>> buffers() const;
  /// parameters() followed by buffers().
  std::vector<NamedTensor<T>> state() const;
  std::int64_t parameter_count() const;

  void zero_grad();

  const std::optional<PositionAttentionParams<T>>& position_attention() const { return pam_; }
  const std::optional<ChannelAttentionParams<T>>& channel_attention() const { return cam_; }

 private:
  struct Branch {
    ConvBlock<T> stem, post;
  };

  void visit(const std::function<void(const std::string&, const Tensor<T>&, bool trainable)>& f) const;

  ModelConfig cfg_;
  ConvBlock<T> stem_;
  std::vector<std::vector<ConvBlock<T>>> stages_;
  std::optional<Branch> fcn_, pam_branch_, cam_branch_;
  std::optional<PositionAttentionParams<T>> pam_;
  std::optional<ChannelAttentionParams<T>> cam_;
  Conv2dParams<T> head_out_;
  std::optional<Conv2dParams<T>> aux_pam_, aux_cam_;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<T>(cfg, seed);
}

/// cross_entropy(main) + aux_weight · Σ cross_entropy(aux_i).
template <typename T>
Tensor<T> multi_loss(const ModelOutput<T>& out, const LabelMap& labels, double aux_weight);

// Checkpoint container (little-endian):
//   "DANETCKP"  u32 version=1  u32 metadata_len  metadata (UTF-8 JSON)
//   u32 count, then per tensor:
//     u32 name_len, name, u8 dtype (1 = f32, 2 = f64), u32 rank,
//     rank × u64 extents, values
struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
  std::uint8_t dtype = 2;
};

struct Checkpoint {
  std::string metadata;
  std::vector<CheckpointTensor> tensors;
};

template <typename T>
void write_checkpoint(const std::string& path, const std::string& metadata,
                      const std::vector<NamedTensor<T>>& tensors);
Checkpoint read_checkpoint(const std::string& path);

/// Writes the model's config as metadata and its full state.
template <typename T>
void save_model(const Model<T>& model, const std::string& path);

/// Rebuilds a model from a checkpoint written by save_model.
template <typename T>
Model<T> load_model(const std::string& path);

/// Copies matching tensors by name; throws DimensionError on shape mismatch
/// and ContractError when a model tensor is missing from the checkpoint.
template <typename T>
void load_state(Model<T>& model, const Checkpoint& ckpt);

}  // namespace danet
