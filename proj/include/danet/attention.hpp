// SPDX-License-Identifier: Apache-2.0
//
// Position and channel self-attention over NCHW feature maps, the fusion head
// that sums their conv-transformed outputs, and helpers that pull attention
// maps out for visualisation.
//
// Position attention, for one batch element with N = H·W positions:
//   s[j][i] = softmax_i( B_i · C_j )
//   E_j     = alpha · Σ_i s[j][i] D_i + A_j
// where B, C, D are 1×1 convolutions of A (B and C reduced to C/r channels).
//
// Channel attention works on A directly, with no embedding convolutions:
//   x[j][i] = softmax_i( A_i · A_j )
//   E_j     = beta · Σ_i x[j][i] A_i + A_j
//
// alpha and beta start at exactly zero, so both modules are the identity at
// initialisation.
#pragma once

#include <cstdint>
#include <utility>

#include "danet/nn.hpp"
#include "danet/tensor.hpp"

namespace danet {

enum class AttentionKind { spatial, channel };

/// Row-stochastic attention matrices, one per batch element: [n × r × r].
template <typename T>
struct AttentionMap {
  Tensor<T> matrix;
  AttentionKind kind = AttentionKind::spatial;

  std::int64_t batch() const { return matrix.size(0); }
  std::int64_t extent() const { return matrix.size(1); }
  /// The [r × r] matrix of batch element `b`.
  Tensor<T> element(std::int64_t b = 0) const;
};

template <typename T>
struct AttentionResult {
  Tensor<T> features;  // E, same shape as the input
  AttentionMap<T> map;
};

template <typename T>
struct PositionAttentionParams {
  Conv2dParams<T> conv_b, conv_c;  // C → C/r, 1×1
  Conv2dParams<T> conv_d;          // C → C, 1×1
  Tensor<T> alpha;                 // trainable scalar
};

template <typename T>
struct ChannelAttentionParams {
  Tensor<T> beta;  // trainable scalar; the module has no convolutions
};

template <typename T>
PositionAttentionParams<T> make_position_attention(std::int64_t channels, std::int64_t reduction_ratio,
                                                   Rng& rng);

template <typename T>
ChannelAttentionParams<T> make_channel_attention();

template <typename T>
AttentionResult<T> position_attention_forward(const Tensor<T>& a, const PositionAttentionParams<T>& p);

template <typename T>
AttentionResult<T> channel_attention_forward(const Tensor<T>& a, const ChannelAttentionParams<T>& p);

/// conv_pam and conv_cam transform each branch; conv_out maps their sum to
/// class scores.
template <typename T>
struct FusionParams {
  ConvBlock<T> conv_pam, conv_cam;
  Conv2dParams<T> conv_out;
};

template <typename T>
Tensor<T> fuse(const Tensor<T>& e_pam, const Tensor<T>& e_cam, FusionParams<T>& p, bool training);

/// Row `row·w + col` of the spatial map of batch element `b`, as [h × w]:
/// how much the chosen position attends to every other position.
template <typename T>
Tensor<T> sub_attention_map(const AttentionMap<T>& s, std::pair<std::int64_t, std::int64_t> point,
                            std::int64_t h, std::int64_t w, std::int64_t b = 0);

/// Channel slice [H × W] of a channel-attention output.
template <typename T>
Tensor<T> attended_channel_map(const Tensor<T>& e_cam, std::int64_t channel, std::int64_t b = 0);

}  // namespace danet
