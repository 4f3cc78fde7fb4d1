// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference implementations. Each one is a direct nested-loop
// evaluation of the defining formula and shares no code with the vectorised
// operators, so agreement between the two is meaningful. Double precision,
// no autodiff.
#pragma once

#include <cstdint>
#include <vector>

#include "danet/nn.hpp"
#include "danet/tensor.hpp"

namespace danet::oracle {

Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b);

std::vector<double> softmax(const std::vector<double>& logits);

/// Six-loop sliding window over an NCHW input.
Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& weight, const Tensor<double>* bias,
                      std::int64_t stride, std::int64_t padding, std::int64_t dilation);

struct AttentionOut {
  Tensor<double> e;  // NCHW
  std::vector<std::vector<std::vector<double>>> map;  // [n][j][i]
};

AttentionOut position_attention(const Tensor<double>& a, const Conv2dParams<double>& conv_b,
                                const Conv2dParams<double>& conv_c, const Conv2dParams<double>& conv_d,
                                double alpha);

AttentionOut channel_attention(const Tensor<double>& a, double beta);

Tensor<double> upsample_bilinear(const Tensor<double>& x, std::int64_t out_h, std::int64_t out_w);

double cross_entropy(const Tensor<double>& logits, const LabelMap& labels, std::int32_t ignore_index);

/// base·(1 − iter/total)^power in long double.
long double poly_lr(long double iter, long double total, long double base, long double power);

}  // namespace danet::oracle
