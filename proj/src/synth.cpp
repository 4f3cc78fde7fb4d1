// SPDX-License-Identifier: Apache-2.0
#include "danet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "danet/errors.hpp"
#include "danet/io.hpp"

namespace danet {

namespace {

using Rgb = std::array<float, 3>;

constexpr Rgb kBackground{0.30f, 0.28f, 0.32f};
constexpr Rgb kShapeColor[4] = {
    {0, 0, 0},
    {0.85f, 0.20f, 0.20f},  // class 1, red
    {0.20f, 0.75f, 0.25f},  // class 2, green
    {0.25f, 0.35f, 0.90f},  // class 3, blue
};
constexpr Rgb kCheckerLight{0.85f, 0.85f, 0.85f};
constexpr Rgb kCheckerDark{0.55f, 0.55f, 0.55f};
constexpr Rgb kMarkerA{0.95f, 0.90f, 0.10f};  // yellow → class 4
constexpr Rgb kMarkerB{0.10f, 0.90f, 0.95f};  // cyan → class 5

struct Box {
  std::int64_t top, left, h, w;
};

void paint(SegSample& s, std::int64_t y, std::int64_t x, const Rgb& c, std::int32_t label) {
  for (std::int64_t ch = 0; ch < 3; ++ch) s.pixel(ch, y, x) = c[static_cast<size_t>(ch)];
  s.label(y, x) = label;
}

Box random_box(Rng& rng, std::int64_t H, std::int64_t W, std::int64_t lo, std::int64_t hi) {
  const auto h = std::min(rng.uniform_int(lo, hi), H);
  const auto w = std::min(rng.uniform_int(lo, hi), W);
  return {rng.uniform_int(0, H - h), rng.uniform_int(0, W - w), h, w};
}

void solid_shape(SegSample& s, Rng& rng, std::int32_t cls) {
  const Box b = random_box(rng, s.height, s.width, 8, 18);
  const bool disk = rng.bernoulli(0.5);
  const double cy = b.top + (b.h - 1) / 2.0, cx = b.left + (b.w - 1) / 2.0;
  const double ry = b.h / 2.0, rx = b.w / 2.0;
  for (std::int64_t y = b.top; y < b.top + b.h; ++y) {
    for (std::int64_t x = b.left; x < b.left + b.w; ++x) {
      if (disk) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        if (dy * dy + dx * dx > 1.0) continue;
      }
      paint(s, y, x, kShapeColor[cls], cls);
    }
  }
}

std::uint8_t marker_at(const SegSample& s, std::int64_t y, std::int64_t x) {
  return s.marker.empty() ? 0 : s.marker[static_cast<size_t>(y * s.width + x)];
}

}  // namespace

void SceneConfig::validate() const {
  if (height < 8 || height % 8 != 0) throw ConfigError("data.height", "must be a positive multiple of 8");
  if (width < 8 || width % 8 != 0) throw ConfigError("data.width", "must be a positive multiple of 8");
  if (num_classes != 6) throw ConfigError("data.num_classes", "the marker scene defines exactly 6 classes");
  if (min_shapes < 0 || max_shapes < min_shapes) throw ConfigError(min_shapes < 0 ? "data.min_shapes" : "data.max_shapes", "need 0 <= min <= max");
  if (!(noise_std >= 0) || !std::isfinite(noise_std)) throw ConfigError("data.noise_std", "must be >= 0");
  if (marker_size < 1) throw ConfigError("data.marker_size", "must be >= 1");
  const auto span = kMarkerInset + marker_size + kContextGap;
  if (min_shapes > 0 && (height < span + 12 || height < 28)) {
    throw ConfigError("data.height", "too small to separate the marker from the textured region");
  }
  if (min_shapes > 0 && (width < span + 12 || width < 28)) {
    throw ConfigError("data.width", "too small to separate the marker from the textured region");
  }
}

SegSample generate_sample(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto H = cfg.height, W = cfg.width;
  SegSample s;
  s.height = H;
  s.width = W;
  s.image.resize(static_cast<size_t>(3 * H * W));
  s.labels.assign(static_cast<size_t>(H * W), 0);
  s.marker.assign(static_cast<size_t>(H * W), 0);
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) paint(s, y, x, kBackground, 0);
  }

  Rng rng(seed);
  const auto shapes = rng.uniform_int(cfg.min_shapes, cfg.max_shapes);
  if (shapes > 0) {
    for (std::int64_t i = 1; i < shapes; ++i) solid_shape(s, rng, static_cast<std::int32_t>(rng.uniform_int(1, 3)));

    // The region keeps at least kContextGap pixels from the marker along one
    // axis, so only context wider than that links the two.
    const bool bottom = rng.bernoulli(0.5), right = rng.bernoulli(0.5);
    const Box marker{bottom ? H - kMarkerInset - cfg.marker_size : kMarkerInset,
                     right ? W - kMarkerInset - cfg.marker_size : kMarkerInset, cfg.marker_size, cfg.marker_size};
    const bool second = rng.bernoulli(0.5);
    std::int32_t region_class = kAmbiguousA;
    if (cfg.marker_rule == MarkerRule::corner_color && second) region_class = kAmbiguousB;

    const auto span = kMarkerInset + cfg.marker_size + kContextGap;
    const bool split_rows = rng.bernoulli(0.5);
    auto far_extent = [&](std::int64_t extent) { return extent - span; };
    Box region{};
    if (split_rows) {
      region.h = std::min(rng.uniform_int(12, 20), far_extent(H));
      region.w = rng.uniform_int(16, 28);
      region.top = rng.uniform_int(0, far_extent(H) - region.h) + (bottom ? 0 : span);
      region.left = rng.uniform_int(0, W - region.w);
    } else {
      region.h = rng.uniform_int(16, 28);
      region.w = std::min(rng.uniform_int(12, 20), far_extent(W));
      region.top = rng.uniform_int(0, H - region.h);
      region.left = rng.uniform_int(0, far_extent(W) - region.w) + (right ? 0 : span);
    }
    for (std::int64_t y = region.top; y < region.top + region.h; ++y) {
      for (std::int64_t x = region.left; x < region.left + region.w; ++x) {
        paint(s, y, x, (y / 2 + x / 2) % 2 ? kCheckerDark : kCheckerLight, region_class);
      }
    }
    if (cfg.marker_rule == MarkerRule::corner_color) {
      for (std::int64_t y = marker.top; y < marker.top + marker.h; ++y) {
        for (std::int64_t x = marker.left; x < marker.left + marker.w; ++x) {
          paint(s, y, x, second ? kMarkerB : kMarkerA, region_class);
          s.marker[static_cast<size_t>(y * W + x)] = 1;
        }
      }
    }
  }

  if (cfg.noise_std > 0) {
    for (auto& v : s.image) v = static_cast<float>(std::clamp(v + cfg.noise_std * rng.normal(), 0.0, 1.0));
  }
  return s;
}

std::vector<SegSample> generate_dataset(const SceneConfig& cfg, std::int64_t count, std::uint64_t seed) {
  std::vector<SegSample> out;
  out.reserve(static_cast<size_t>(std::max<std::int64_t>(count, 0)));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(generate_sample(cfg, mix64(seed * 0x100000001b3ULL + static_cast<std::uint64_t>(i))));
  return out;
}

SegSample crop_sample(const SegSample& s, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w,
                      bool flip) {
  if (h < 1 || w < 1 || top < 0 || left < 0 || top + h > s.height || left + w > s.width) {
    throw ContractError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(top) + "," +
                        std::to_string(left) + ") exceeds image " + std::to_string(s.height) + "x" +
                        std::to_string(s.width));
  }
  SegSample out;
  out.height = h;
  out.width = w;
  out.image.resize(static_cast<size_t>(3 * h * w));
  out.labels.resize(static_cast<size_t>(h * w));
  out.marker.assign(static_cast<size_t>(h * w), 0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto sx = left + (flip ? w - 1 - x : x);
      for (std::int64_t c = 0; c < 3; ++c) out.pixel(c, y, x) = s.pixel(c, top + y, sx);
      out.label(y, x) = s.label(top + y, sx);
      out.marker[static_cast<size_t>(y * w + x)] = marker_at(s, top + y, sx);
    }
  }
  return out;
}

SegSample augment(const SegSample& s, std::pair<std::int64_t, std::int64_t> crop, double flip_prob, Rng& rng) {
  const auto [h, w] = crop;
  if (h < 1 || w < 1 || h > s.height || w > s.width) {
    throw ContractError("augment: crop " + std::to_string(h) + "x" + std::to_string(w) + " exceeds image " +
                        std::to_string(s.height) + "x" + std::to_string(s.width));
  }
  const auto top = rng.uniform_int(0, s.height - h);
  const auto left = rng.uniform_int(0, s.width - w);
  const bool flip = rng.bernoulli(flip_prob);
  return crop_sample(s, top, left, h, w, flip);
}

SegSample scale_augment(const SegSample& s, double factor, std::pair<std::int64_t, std::int64_t> min_extent) {
  if (!(factor > 0) || !std::isfinite(factor)) throw ContractError("scale_augment: factor must be > 0");
  const auto h = static_cast<std::int64_t>(std::llround(static_cast<double>(s.height) * factor));
  const auto w = static_cast<std::int64_t>(std::llround(static_cast<double>(s.width) * factor));
  if (h < std::max<std::int64_t>(1, min_extent.first) || w < std::max<std::int64_t>(1, min_extent.second)) {
    throw ContractError("scale_augment: factor " + io::format_double(factor) + " gives " + std::to_string(h) + "x" +
                        std::to_string(w) + ", below the required " + std::to_string(min_extent.first) + "x" +
                        std::to_string(min_extent.second));
  }
  SegSample out;
  out.height = h;
  out.width = w;
  {
    NoGradGuard guard;
    const Tensor<float> img({1, 3, s.height, s.width}, s.image);
    out.image = upsample_bilinear(img, h, w).values();
  }
  out.labels.resize(static_cast<size_t>(h * w));
  out.marker.assign(static_cast<size_t>(h * w), 0);
  auto nearest = [](std::int64_t o, std::int64_t in, std::int64_t outn) {
    const auto src = static_cast<std::int64_t>(std::floor((o + 0.5) * static_cast<double>(in) / static_cast<double>(outn)));
    return std::clamp<std::int64_t>(src, 0, in - 1);
  };
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto sy = nearest(y, s.height, h), sx = nearest(x, s.width, w);
      out.label(y, x) = s.label(sy, sx);
      out.marker[static_cast<size_t>(y * w + x)] = marker_at(s, sy, sx);
    }
  }
  return out;
}

double marker_blind_ceiling(const std::vector<SegSample>& samples) {
  std::int64_t a = 0, b = 0;
  for (const auto& s : samples) {
    for (std::int64_t y = 0; y < s.height; ++y) {
      for (std::int64_t x = 0; x < s.width; ++x) {
        if (marker_at(s, y, x)) continue;
        a += s.label(y, x) == kAmbiguousA;
        b += s.label(y, x) == kAmbiguousB;
      }
    }
  }
  if (a + b == 0) return 1.0;
  return static_cast<double>(std::max(a, b)) / static_cast<double>(a + b);
}

template <typename T>
std::pair<Tensor<T>, LabelMap> make_batch(const std::vector<SegSample>& samples) {
  if (samples.empty()) throw ContractError("make_batch: no samples");
  const auto h = samples.front().height, w = samples.front().width;
  const auto n = static_cast<std::int64_t>(samples.size());
  std::vector<T> data;
  data.reserve(static_cast<size_t>(n * 3 * h * w));
  LabelMap labels(n, h, w);
  for (std::int64_t b = 0; b < n; ++b) {
    const auto& s = samples[static_cast<size_t>(b)];
    if (s.height != h || s.width != w) throw DimensionError("make_batch: samples differ in extent");
    for (float v : s.image) data.push_back(static_cast<T>(v));
    std::copy(s.labels.begin(), s.labels.end(), labels.ids.begin() + b * h * w);
  }
  return {Tensor<T>({n, 3, h, w}, std::move(data)), std::move(labels)};
}

void write_dataset(const std::vector<SegSample>& samples, const std::string& dir) {
  io::ensure_dir(dir);
  std::string manifest = io::csv_row({"index", "image", "label"});
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::vector<std::uint8_t> rgb(static_cast<size_t>(3 * s.height * s.width));
    std::vector<std::uint8_t> ids(static_cast<size_t>(s.height * s.width));
    for (std::int64_t y = 0; y < s.height; ++y) {
      for (std::int64_t x = 0; x < s.width; ++x) {
        const auto p = static_cast<size_t>(y * s.width + x);
        for (std::int64_t c = 0; c < 3; ++c) {
          rgb[3 * p + static_cast<size_t>(c)] = static_cast<std::uint8_t>(std::floor(s.pixel(c, y, x) * 255.0f + 0.5f));
        }
        ids[p] = static_cast<std::uint8_t>(s.label(y, x));
      }
    }
    const auto stem = std::to_string(i);
    io::write_ppm(dir + "/image_" + stem + ".ppm", s.width, s.height, rgb);
    io::write_pgm(dir + "/label_" + stem + ".pgm", s.width, s.height, ids);
    manifest += io::csv_row({stem, "image_" + stem + ".ppm", "label_" + stem + ".pgm"});
  }
  io::write_file(dir + "/manifest.csv", manifest);
}

template std::pair<Tensor<float>, LabelMap> make_batch(const std::vector<SegSample>&);
template std::pair<Tensor<double>, LabelMap> make_batch(const std::vector<SegSample>&);

}  // namespace danet
