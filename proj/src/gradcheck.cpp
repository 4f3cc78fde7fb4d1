// SPDX-License-Identifier: Apache-2.0
#include "danet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace danet {

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T> t, T h) {
  NoGradGuard no_grad;
  std::vector<T> g(static_cast<size_t>(t.numel()));
  auto data = t.data();
  for (size_t k = 0; k < data.size(); ++k) {
    const T saved = data[k];
    data[k] = saved + h;
    const T up = f(t);
    data[k] = saved - h;
    const T down = f(t);
    data[k] = saved;
    g[k] = (up - down) / (T(2) * h);
  }
  return Tensor<T>(t.shape(), std::move(g));
}

template <typename T>
double relative_error(std::span<const T> a, std::span<const T> b) {
  double diff = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(std::max(na, nb)), 1e-6);
}

template <typename T>
double gradient_error(const std::function<Tensor<T>()>& loss_fn, const std::vector<Tensor<T>>& wrt, T h) {
  for (auto t : wrt) t.zero_grad();
  Tensor<T> loss = loss_fn();
  backward(loss);
  double worst = 0;
  for (const auto& t : wrt) {
    const Tensor<T> analytic = t.grad_tensor();
    const Tensor<T> numeric =
        finite_diff_grad<T>([&](const Tensor<T>&) { return loss_fn().item(); }, t, h);
    worst = std::max(worst, relative_error<T>(analytic.data(), numeric.data()));
  }
  return worst;
}

template Tensor<float> finite_diff_grad(const std::function<float(const Tensor<float>&)>&, Tensor<float>, float);
template Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>&, Tensor<double>,
                                         double);
template double relative_error<float>(std::span<const float>, std::span<const float>);
template double relative_error<double>(std::span<const double>, std::span<const double>);
template double gradient_error(const std::function<Tensor<float>()>&, const std::vector<Tensor<float>>&, float);
template double gradient_error(const std::function<Tensor<double>()>&, const std::vector<Tensor<double>>&,
                               double);

}  // namespace danet
