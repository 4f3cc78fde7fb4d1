// SPDX-License-Identifier: Apache-2.0
//
// Layers for the backbone and heads: dilated 2-D convolution, batch
// normalisation, bilinear resizing and pixel-wise cross-entropy. All tensors
// are NCHW.
#pragma once

#include <cstdint>
#include <vector>

#include "danet/rng.hpp"
#include "danet/tensor.hpp"

namespace danet {

inline constexpr std::int32_t kIgnoreIndex = 255;

/// Integer class map [n×h×w].
struct LabelMap {
  std::int64_t n = 0, h = 0, w = 0;
  std::vector<std::int32_t> ids;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), ids(static_cast<size_t>(n_ * h_ * w_), fill) {}
  std::int32_t& at(std::int64_t b, std::int64_t y, std::int64_t x) {
    return ids[static_cast<size_t>((b * h + y) * w + x)];
  }
  std::int32_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
    return ids[static_cast<size_t>((b * h + y) * w + x)];
  }
  bool operator==(const LabelMap&) const = default;
};

template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // [out_ch × in_ch × kh × kw]
  Tensor<T> bias;    // [out_ch], meaningful only when has_bias
  bool has_bias = false;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;

  std::int64_t out_channels() const { return weight.size(0); }
  std::int64_t in_channels() const { return weight.size(1); }
  std::int64_t kernel() const { return weight.size(2); }
};

/// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
template <typename T>
Conv2dParams<T> make_conv(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                          Rng& rng, bool bias = false, std::int64_t stride = 1,
                          std::int64_t padding = 0, std::int64_t dilation = 1);

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                             std::int64_t padding, std::int64_t dilation);

/// Cross-correlation with dilation; differentiable in input, weight and bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& p);

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma, beta;                // trainable, [ch]
  Tensor<T> running_mean, running_var;  // buffers, [ch]
  T eps = T(1e-5);
  T momentum = T(0.1);

  std::int64_t channels() const { return gamma.numel(); }
};

template <typename T>
BatchNormParams<T> make_batch_norm(std::int64_t channels);

/// Training mode normalises with batch statistics over (n, h, w) and updates
/// the running averages in `p`; eval mode applies the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormParams<T>& p, bool training);

/// conv → (batch norm → ReLU). With `normalize` off the block is a bare conv.
template <typename T>
struct ConvBlock {
  Conv2dParams<T> conv;
  BatchNormParams<T> bn;
  bool normalize = true;

  Tensor<T> operator()(const Tensor<T>& x, bool training);
};

/// 3×3 (or `kernel`) conv without bias, batch norm, ReLU; "same" padding.
template <typename T>
ConvBlock<T> make_conv_block(std::int64_t in_ch, std::int64_t out_ch, Rng& rng,
                             std::int64_t kernel = 3, std::int64_t stride = 1,
                             std::int64_t dilation = 1);

/// Bilinear resize with half-pixel centres (align_corners = false).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w);

/// Mean of -log softmax(logits)[label] over pixels whose label is not
/// `ignore_index`. Zero when every pixel is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& labels,
                        std::int32_t ignore_index = kIgnoreIndex);

}  // namespace danet
