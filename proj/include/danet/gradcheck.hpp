// SPDX-License-Identifier: Apache-2.0
//
// Central finite differences, the independent oracle for every backward rule.
#pragma once

#include <functional>
#include <vector>

#include "danet/tensor.hpp"

namespace danet {

/// (f(t + h·e_k) − f(t − h·e_k)) / 2h for every element k of t. `t` is
/// perturbed in place (and restored), so f may reach it through shared
/// storage as well as through its argument.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T> t, T h);

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, 1e-6). The floor keeps near-zero gradients,
/// where finite-difference rounding noise dominates, from reading as large
/// relative errors; below it the check is absolute at 1e-6 × tolerance.
template <typename T>
double relative_error(std::span<const T> a, std::span<const T> b);

/// Runs `loss_fn` once with autodiff and compares the gradient of every tensor
/// in `wrt` against finite_diff_grad. Returns the worst relative error.
template <typename T>
double gradient_error(const std::function<Tensor<T>()>& loss_fn, const std::vector<Tensor<T>>& wrt,
                      T h = T(1e-5));

}  // namespace danet
