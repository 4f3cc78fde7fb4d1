// SPDX-License-Identifier: Apache-2.0
//
// Procedural segmentation scenes where one region can only be labelled by
// looking far away.
//
// Every scene with at least one shape contains an "ambiguous" checkerboard
// region whose pixels are class 4 or class 5 depending solely on the colour
// of a small marker patch placed near one of the image corners (yellow → 4,
// cyan → 5). The two classes are pixel-for-pixel identical in appearance, so
// a predictor that never sees the marker is capped at the majority rate on
// those pixels. Marker pixels carry the class they announce. The remaining
// shapes are solid rectangles and disks of classes 1–3 on a class-0
// background.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "danet/nn.hpp"
#include "danet/rng.hpp"

namespace danet {

enum class MarkerRule {
  none,          // ambiguous texture is always class 4; no marker
  corner_color,  // marker colour picks class 4 or 5
};

struct SceneConfig {
  std::int64_t height = 64, width = 64;
  std::int64_t num_classes = 6;
  /// Shapes per image including the ambiguous region; 0 gives a blank scene.
  std::int64_t min_shapes = 2, max_shapes = 4;
  MarkerRule marker_rule = MarkerRule::corner_color;
  /// Side of the square corner marker in pixels.
  std::int64_t marker_size = 8;
  double noise_std = 0.05;

  void validate() const;
};

inline constexpr std::int32_t kAmbiguousA = 4;
inline constexpr std::int32_t kAmbiguousB = 5;
/// Distance of the marker from the image border; no smaller than the crop
/// margin of the default recipe, so crops never remove it.
inline constexpr std::int64_t kMarkerInset = 8;
/// Minimum separation, along one axis, between the marker and the textured
/// region. Exceeds the receptive-field radius of the default backbone.
inline constexpr std::int64_t kContextGap = 32;

/// Image [3 × H × W] in [0, 1] (row-major planes) and labels [H × W].
struct SegSample {
  std::int64_t height = 0, width = 0;
  std::vector<float> image;
  std::vector<std::int32_t> labels;
  /// 1 on marker pixels, [H × W]; follows the labels through augmentation.
  std::vector<std::uint8_t> marker;

  float& pixel(std::int64_t c, std::int64_t y, std::int64_t x) {
    return image[static_cast<size_t>((c * height + y) * width + x)];
  }
  float pixel(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return image[static_cast<size_t>((c * height + y) * width + x)];
  }
  std::int32_t& label(std::int64_t y, std::int64_t x) { return labels[static_cast<size_t>(y * width + x)]; }
  std::int32_t label(std::int64_t y, std::int64_t x) const { return labels[static_cast<size_t>(y * width + x)]; }
  bool operator==(const SegSample&) const = default;
};

/// Pure function of (cfg, seed).
SegSample generate_sample(const SceneConfig& cfg, std::uint64_t seed);

/// Samples with seeds derived from `seed`, one per index.
std::vector<SegSample> generate_dataset(const SceneConfig& cfg, std::int64_t count, std::uint64_t seed);

/// Random crop window plus optional left-right flip, applied jointly.
SegSample augment(const SegSample& s, std::pair<std::int64_t, std::int64_t> crop, double flip_prob, Rng& rng);

/// Crop at a fixed offset; `flip` mirrors the result horizontally.
SegSample crop_sample(const SegSample& s, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w,
                      bool flip);

/// Bilinear resize of the image, nearest-neighbour resize of the labels.
/// `min_extent` is the smallest acceptable result (e.g. the crop size).
SegSample scale_augment(const SegSample& s, double factor, std::pair<std::int64_t, std::int64_t> min_extent = {1, 1});

/// Upper bound on accuracy over the textured (non-marker) class 4/5 pixels
/// for any predictor that does not see the marker: the majority share of
/// class 4 vs 5 among those pixels. 1.0 when there are none.
double marker_blind_ceiling(const std::vector<SegSample>& samples);

/// Stacks samples into an [n × 3 × H × W] image tensor and labels.
template <typename T>
std::pair<Tensor<T>, LabelMap> make_batch(const std::vector<SegSample>& samples);

/// Writes image_<i>.ppm (P6) and label_<i>.pgm (P5) plus manifest.csv
/// (columns: index,image,label) into `dir`.
void write_dataset(const std::vector<SegSample>& samples, const std::string& dir);

}  // namespace danet
