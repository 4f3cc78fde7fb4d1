// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "danet/tensor.hpp"

namespace danet {

/// [m×k]·[k×n] → [m×n], or batched [b×m×k]·[b×k×n] → [b×m×n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Swaps the last two axes of a 2-D or 3-D tensor (materialised).
template <typename T>
Tensor<T> transpose2d(const Tensor<T>& m);

/// Softmax along the last axis. Subtracts the per-row maximum first, which is
/// exact by shift invariance. Throws NumericError on non-finite input.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& m);

/// Row-major reinterpretation; element count must be preserved.
template <typename T>
Tensor<T> reshape(const Tensor<T>& t, Shape new_shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Element-wise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// t · s where s is a trainable one-element tensor.
template <typename T>
Tensor<T> scale(const Tensor<T>& t, const Tensor<T>& s);

/// t · c for a constant c.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& t, T c);

template <typename T>
Tensor<T> relu(const Tensor<T>& t);

/// Sum of all elements as a one-element tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& t);

template <typename T>
Tensor<T> mean(const Tensor<T>& t);

/// Copy of channel `c` from every batch element of an [n×C×H×W] tensor,
/// returned as [n×1×H×W]. Differentiable.
template <typename T>
Tensor<T> select_channel(const Tensor<T>& t, std::int64_t c);

}  // namespace danet
