// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace danet::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMat<T>> mat(T* p, std::int64_t rows, std::int64_t cols) {
  return {p, rows, cols};
}

template <typename T>
Eigen::Map<const RowMat<T>> cmat(const T* p, std::int64_t rows, std::int64_t cols) {
  return {p, rows, cols};
}

}  // namespace danet::detail
