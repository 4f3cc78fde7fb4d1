// SPDX-License-Identifier: Apache-2.0
#include "danet/model.hpp"

#include <json.hpp>

#include "danet/ops.hpp"

namespace danet {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::baseline_fcn: return "baseline";
    case Variant::pam_only: return "pam";
    case Variant::cam_only: return "cam";
    case Variant::dual: return "dual";
  }
  return "dual";
}

Variant parse_variant(const std::string& name) {
  if (name == "baseline" || name == "baseline_fcn") return Variant::baseline_fcn;
  if (name == "pam" || name == "pam_only") return Variant::pam_only;
  if (name == "cam" || name == "cam_only") return Variant::cam_only;
  if (name == "dual") return Variant::dual;
  throw ConfigError("variant", "unknown variant '" + name + "' (expected baseline, pam, cam or dual)");
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model.num_classes", "must be >= 2");
  if (backbone_channels.size() != 4) throw ConfigError("model.backbone_channels", "needs exactly 4 stages");
  for (auto c : backbone_channels) {
    if (c < 1) throw ConfigError("model.backbone_channels", "entries must be >= 1");
  }
  if (module_channels < 1) throw ConfigError("model.module_channels", "must be >= 1");
  if (reduction_ratio < 1 || reduction_ratio > module_channels) {
    throw ConfigError("model.reduction_ratio", "must lie in [1, module_channels]");
  }
  if (stage_dilations.size() != 4) throw ConfigError("model.stage_dilations", "needs exactly 4 stages");
  for (auto d : stage_dilations) {
    if (d < 1) throw ConfigError("model.stage_dilations", "dilations must be >= 1");
  }
  if (stage_dilations[0] != 1 || stage_dilations[1] != 1) {
    throw ConfigError("model.stage_dilations", "downsampling stages 1-2 need dilation 1");
  }
  if (blocks_per_stage < 1) throw ConfigError("model.blocks_per_stage", "must be >= 1");
  if (branch_kernel < 1 || branch_kernel % 2 == 0) throw ConfigError("model.branch_kernel", "must be odd and >= 1");
  for (auto d : multi_grid) {
    if (d < 1) throw ConfigError("model.multi_grid", "dilations must be >= 1");
  }
}

std::string to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["num_classes"] = cfg.num_classes;
  j["backbone_channels"] = cfg.backbone_channels;
  j["module_channels"] = cfg.module_channels;
  j["reduction_ratio"] = cfg.reduction_ratio;
  j["stage_dilations"] = cfg.stage_dilations;
  j["blocks_per_stage"] = cfg.blocks_per_stage;
  j["branch_kernel"] = cfg.branch_kernel;
  j["multi_grid"] = cfg.multi_grid;
  j["variant"] = variant_name(cfg.variant);
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.num_classes = j.at("num_classes").get<std::int64_t>();
  cfg.backbone_channels = j.at("backbone_channels").get<std::vector<std::int64_t>>();
  cfg.module_channels = j.at("module_channels").get<std::int64_t>();
  cfg.reduction_ratio = j.at("reduction_ratio").get<std::int64_t>();
  cfg.stage_dilations = j.at("stage_dilations").get<std::vector<std::int64_t>>();
  cfg.blocks_per_stage = j.at("blocks_per_stage").get<std::int64_t>();
  cfg.branch_kernel = j.at("branch_kernel").get<std::int64_t>();
  cfg.multi_grid = j.at("multi_grid").get<std::vector<std::int64_t>>();
  cfg.variant = parse_variant(j.at("variant").get<std::string>());
  cfg.validate();
  return cfg;
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng root(seed);
  Rng rng = root.split(1);
  const auto& ch = cfg_.backbone_channels;

  // Output stride 8: stem and stages 1-2 each halve the resolution; stages
  // 3-4 keep it and dilate instead.
  stem_ = make_conv_block<T>(3, ch[0], rng, 3, 2);
  const std::int64_t strides[4] = {2, 2, 1, 1};
  std::int64_t in = ch[0];
  for (size_t s = 0; s < 4; ++s) {
    std::vector<std::int64_t> stage_dil(static_cast<size_t>(cfg_.blocks_per_stage), cfg_.stage_dilations[s]);
    if (s == 3 && !cfg_.multi_grid.empty()) stage_dil = cfg_.multi_grid;
    std::vector<ConvBlock<T>> blocks;
    for (size_t b = 0; b < stage_dil.size(); ++b) {
      blocks.push_back(make_conv_block<T>(in, ch[s], rng, 3, b == 0 ? strides[s] : 1, stage_dil[b]));
      in = ch[s];
    }
    stages_.push_back(std::move(blocks));
  }

  const auto m = cfg_.module_channels;
  auto make_branch = [&] {
    Branch br;
    br.stem = make_conv_block<T>(in, m, rng, cfg_.branch_kernel);
    br.post = make_conv_block<T>(m, m, rng, cfg_.branch_kernel);
    return br;
  };
  const bool with_pam = cfg_.variant == Variant::pam_only || cfg_.variant == Variant::dual;
  const bool with_cam = cfg_.variant == Variant::cam_only || cfg_.variant == Variant::dual;
  if (!with_pam && !with_cam) fcn_ = make_branch();
  if (with_pam) {
    pam_branch_ = make_branch();
    pam_ = make_position_attention<T>(m, cfg_.reduction_ratio, rng);
  }
  if (with_cam) {
    cam_branch_ = make_branch();
    cam_ = make_channel_attention<T>();
  }
  head_out_ = make_conv<T>(m, cfg_.num_classes, 1, rng, true);
  if (cfg_.variant == Variant::dual) {
    aux_pam_ = make_conv<T>(m, cfg_.num_classes, 1, rng, true);
    aux_cam_ = make_conv<T>(m, cfg_.num_classes, 1, rng, true);
  }
}

template <typename T>
Tensor<T> Model<T>::backbone(const Tensor<T>& images, bool training) {
  Tensor<T> x = stem_(images, training);
  for (auto& stage : stages_) {
    for (auto& block : stage) x = block(x, training);
  }
  return x;
}

template <typename T>
ModelOutput<T> Model<T>::forward(const Tensor<T>& images, const ForwardOptions& opts) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw DimensionError("forward: expected [n x 3 x H x W] images, got " + shape_str(images.shape()));
  }
  const auto h = images.size(2), w = images.size(3);
  if (h % 8 != 0 || w % 8 != 0) {
    throw DimensionError("forward: image extents " + std::to_string(h) + "x" + std::to_string(w) +
                         " are not divisible by 8");
  }
  ModelOutput<T> out;
  const Tensor<T> features = backbone(images, opts.training);
  out.feature_h = features.size(2);
  out.feature_w = features.size(3);
  const bool train = opts.training;

  std::optional<Tensor<T>> pam_out, cam_out;
  if (pam_branch_) {
    Tensor<T> x = pam_branch_->stem(features, train);
    if (!opts.bypass_attention) {
      auto res = position_attention_forward(x, *pam_);
      x = res.features;
      if (opts.capture_attention) out.spatial = res.map;
    }
    pam_out = pam_branch_->post(x, train);
  }
  if (cam_branch_) {
    Tensor<T> x = cam_branch_->stem(features, train);
    if (!opts.bypass_attention) {
      auto res = channel_attention_forward(x, *cam_);
      x = res.features;
      if (opts.capture_attention) out.channel = res.map;
    }
    if (opts.capture_attention) out.cam_features = x;
    cam_out = cam_branch_->post(x, train);
  }

  Tensor<T> fused;
  if (fcn_) {
    fused = fcn_->post(fcn_->stem(features, train), train);
  } else if (pam_out && cam_out) {
    fused = add(*pam_out, *cam_out);
  } else {
    fused = pam_out ? *pam_out : *cam_out;
  }
  out.main_logits = upsample_bilinear(conv2d(fused, head_out_), h, w);
  if (aux_pam_) out.aux_logits.push_back(upsample_bilinear(conv2d(*pam_out, *aux_pam_), h, w));
  if (aux_cam_) out.aux_logits.push_back(upsample_bilinear(conv2d(*cam_out, *aux_cam_), h, w));
  return out;
}

template <typename T>
void Model<T>::visit(const std::function<void(const std::string&, const Tensor<T>&, bool)>& f) const {
  auto block = [&](const std::string& name, const ConvBlock<T>& b) {
    f(name + ".conv.weight", b.conv.weight, true);
    if (b.conv.has_bias) f(name + ".conv.bias", b.conv.bias, true);
    if (b.normalize) {
      f(name + ".bn.gamma", b.bn.gamma, true);
      f(name + ".bn.beta", b.bn.beta, true);
      f(name + ".bn.running_mean", b.bn.running_mean, false);
      f(name + ".bn.running_var", b.bn.running_var, false);
    }
  };
  auto conv = [&](const std::string& name, const Conv2dParams<T>& c) {
    f(name + ".weight", c.weight, true);
    if (c.has_bias) f(name + ".bias", c.bias, true);
  };
  block("backbone.stem", stem_);
  for (size_t s = 0; s < stages_.size(); ++s) {
    for (size_t b = 0; b < stages_[s].size(); ++b) {
      block("backbone.stage" + std::to_string(s + 1) + "." + std::to_string(b), stages_[s][b]);
    }
  }
  if (fcn_) {
    block("fcn.stem", fcn_->stem);
    block("fcn.post", fcn_->post);
  }
  if (pam_branch_) {
    block("pam.stem", pam_branch_->stem);
    conv("pam.conv_b", pam_->conv_b);
    conv("pam.conv_c", pam_->conv_c);
    conv("pam.conv_d", pam_->conv_d);
    f("pam.alpha", pam_->alpha, true);
    block("pam.post", pam_branch_->post);
  }
  if (cam_branch_) {
    block("cam.stem", cam_branch_->stem);
    f("cam.beta", cam_->beta, true);
    block("cam.post", cam_branch_->post);
  }
  conv("head.out", head_out_);
  if (aux_pam_) conv("aux.pam", *aux_pam_);
  if (aux_cam_) conv("aux.cam", *aux_cam_);
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  visit([&](const std::string& n, const Tensor<T>& t, bool trainable) {
    if (trainable) out.push_back({n, t});
  });
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::buffers() const {
  std::vector<NamedTensor<T>> out;
  visit([&](const std::string& n, const Tensor<T>& t, bool trainable) {
    if (!trainable) out.push_back({n, t});
  });
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::state() const {
  auto out = parameters();
  for (auto& b : buffers()) out.push_back(std::move(b));
  return out;
}

template <typename T>
std::int64_t Model<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
Tensor<T> multi_loss(const ModelOutput<T>& out, const LabelMap& labels, double aux_weight) {
  if (aux_weight < 0) throw ContractError("multi_loss: aux_weight must be >= 0");
  Tensor<T> loss = cross_entropy(out.main_logits, labels);
  if (aux_weight == 0) return loss;
  for (const auto& aux : out.aux_logits) {
    loss = add(loss, scale_by(cross_entropy(aux, labels), static_cast<T>(aux_weight)));
  }
  return loss;
}

template class Model<float>;
template class Model<double>;
template Tensor<float> multi_loss(const ModelOutput<float>&, const LabelMap&, double);
template Tensor<double> multi_loss(const ModelOutput<double>&, const LabelMap&, double);

}  // namespace danet
