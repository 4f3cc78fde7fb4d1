// SPDX-License-Identifier: Apache-2.0
#include "danet/attention.hpp"

#include <algorithm>

#include "danet/ops.hpp"

namespace danet {

template <typename T>
Tensor<T> AttentionMap<T>::element(std::int64_t b) const {
  const auto r = extent();
  if (b < 0 || b >= batch()) {
    throw ContractError("attention map: batch element " + std::to_string(b) + " outside [0, " +
                        std::to_string(batch()) + ")");
  }
  std::vector<T> out(static_cast<size_t>(r * r));
  std::copy_n(matrix.data().data() + b * r * r, r * r, out.data());
  return Tensor<T>({r, r}, std::move(out));
}

template <typename T>
PositionAttentionParams<T> make_position_attention(std::int64_t channels, std::int64_t reduction_ratio,
                                                   Rng& rng) {
  if (reduction_ratio < 1) throw ConfigError("reduction_ratio", "must be >= 1");
  const std::int64_t reduced = std::max<std::int64_t>(1, channels / reduction_ratio);
  PositionAttentionParams<T> p;
  p.conv_b = make_conv<T>(channels, reduced, 1, rng, true);
  p.conv_c = make_conv<T>(channels, reduced, 1, rng, true);
  p.conv_d = make_conv<T>(channels, channels, 1, rng, true);
  p.alpha = Tensor<T>::scalar(T(0));
  p.alpha.set_requires_grad(true);
  return p;
}

template <typename T>
ChannelAttentionParams<T> make_channel_attention() {
  ChannelAttentionParams<T> p;
  p.beta = Tensor<T>::scalar(T(0));
  p.beta.set_requires_grad(true);
  return p;
}

namespace {

template <typename T>
void require_nchw(const Tensor<T>& a, const char* op) {
  if (a.dim() != 4) throw DimensionError(std::string(op) + ": expected NCHW, got " + shape_str(a.shape()));
}

}  // namespace

template <typename T>
AttentionResult<T> position_attention_forward(const Tensor<T>& a, const PositionAttentionParams<T>& p) {
  require_nchw(a, "position_attention_forward");
  const auto n = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3), positions = h * w;
  const auto reduced = p.conv_b.out_channels();
  if (p.conv_c.out_channels() != reduced) {
    throw DimensionError("position_attention_forward: conv_b and conv_c output channels differ");
  }
  Tensor<T> query = reshape(conv2d(a, p.conv_b), {n, reduced, positions});
  Tensor<T> key = reshape(conv2d(a, p.conv_c), {n, reduced, positions});
  Tensor<T> value = reshape(conv2d(a, p.conv_d), {n, c, positions});
  // energy[j][i] = C_j · B_i
  Tensor<T> s = softmax_rows(matmul(transpose2d(key), query));
  Tensor<T> gathered = reshape(matmul(value, transpose2d(s)), {n, c, h, w});
  Tensor<T> e = add(scale(gathered, p.alpha), a);
  return {e, {s, AttentionKind::spatial}};
}

template <typename T>
AttentionResult<T> channel_attention_forward(const Tensor<T>& a, const ChannelAttentionParams<T>& p) {
  require_nchw(a, "channel_attention_forward");
  const auto n = a.size(0), c = a.size(1), h = a.size(2), w = a.size(3);
  Tensor<T> flat = reshape(a, {n, c, h * w});
  // Raw Gram matrix of channel maps; softmax's max subtraction keeps it stable.
  Tensor<T> x = softmax_rows(matmul(flat, transpose2d(flat)));
  Tensor<T> gathered = reshape(matmul(x, flat), {n, c, h, w});
  Tensor<T> e = add(scale(gathered, p.beta), a);
  return {e, {x, AttentionKind::channel}};
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& e_pam, const Tensor<T>& e_cam, FusionParams<T>& p, bool training) {
  Tensor<T> lhs = p.conv_pam(e_pam, training);
  Tensor<T> rhs = p.conv_cam(e_cam, training);
  if (lhs.shape() != rhs.shape()) {
    throw DimensionError("fuse: branch outputs " + shape_str(lhs.shape()) + " and " +
                         shape_str(rhs.shape()) + " cannot be summed");
  }
  return conv2d(add(lhs, rhs), p.conv_out);
}

template <typename T>
Tensor<T> sub_attention_map(const AttentionMap<T>& s, std::pair<std::int64_t, std::int64_t> point,
                            std::int64_t h, std::int64_t w, std::int64_t b) {
  if (s.kind != AttentionKind::spatial) throw ContractError("sub_attention_map: needs a spatial map");
  const auto [row, col] = point;
  if (h * w != s.extent()) {
    throw DimensionError("sub_attention_map: " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not match a map over " + std::to_string(s.extent()) + " positions");
  }
  if (row < 0 || row >= h || col < 0 || col >= w) {
    throw ContractError("sub_attention_map: point (" + std::to_string(row) + "," + std::to_string(col) +
                        ") outside " + std::to_string(h) + "x" + std::to_string(w));
  }
  const Tensor<T> m = s.element(b);
  const auto r = s.extent();
  std::vector<T> out(static_cast<size_t>(r));
  std::copy_n(m.data().data() + (row * w + col) * r, r, out.data());
  return Tensor<T>({h, w}, std::move(out));
}

template <typename T>
Tensor<T> attended_channel_map(const Tensor<T>& e_cam, std::int64_t channel, std::int64_t b) {
  require_nchw(e_cam, "attended_channel_map");
  if (b < 0 || b >= e_cam.size(0)) throw ContractError("attended_channel_map: batch element out of range");
  if (channel < 0 || channel >= e_cam.size(1)) {
    throw ContractError("attended_channel_map: channel " + std::to_string(channel) + " outside [0, " +
                        std::to_string(e_cam.size(1)) + ")");
  }
  const auto h = e_cam.size(2), w = e_cam.size(3);
  std::vector<T> out(static_cast<size_t>(h * w));
  std::copy_n(e_cam.data().data() + (b * e_cam.size(1) + channel) * h * w, h * w, out.data());
  return Tensor<T>({h, w}, std::move(out));
}

#define DANET_INSTANTIATE(T)                                                                          \
  template struct AttentionMap<T>;                                                                    \
  template PositionAttentionParams<T> make_position_attention<T>(std::int64_t, std::int64_t, Rng&);   \
  template ChannelAttentionParams<T> make_channel_attention<T>();                                     \
  template AttentionResult<T> position_attention_forward(const Tensor<T>&,                            \
                                                         const PositionAttentionParams<T>&);          \
  template AttentionResult<T> channel_attention_forward(const Tensor<T>&,                             \
                                                        const ChannelAttentionParams<T>&);            \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, FusionParams<T>&, bool);                 \
  template Tensor<T> sub_attention_map(const AttentionMap<T>&, std::pair<std::int64_t, std::int64_t>, \
                                       std::int64_t, std::int64_t, std::int64_t);                     \
  template Tensor<T> attended_channel_map(const Tensor<T>&, std::int64_t, std::int64_t);

DANET_INSTANTIATE(float)
DANET_INSTANTIATE(double)

}  // namespace danet
