// SPDX-License-Identifier: Apache-2.0
#include "danet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "eigen_maps.hpp"

namespace danet {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

struct MatDims {
  std::int64_t batch, rows, cols;
};

template <typename T>
MatDims mat_dims(const Tensor<T>& t, const char* op) {
  if (t.dim() == 2) return {1, t.size(0), t.size(1)};
  if (t.dim() == 3) return {t.size(0), t.size(1), t.size(2)};
  throw DimensionError(std::string(op) + ": expected a 2-D or 3-D tensor, got " +
                       shape_str(t.shape()));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() != b.dim()) {
    throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " have different ranks");
  }
  const MatDims da = mat_dims(a, "matmul");
  const MatDims db = mat_dims(b, "matmul");
  if (da.cols != db.rows || da.batch != db.batch) {
    throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are incompatible");
  }
  const auto m = da.rows, k = da.cols, n = db.cols, nb = da.batch;
  std::vector<T> out(static_cast<size_t>(nb * m * n));
  for (std::int64_t i = 0; i < nb; ++i) {
    detail::mat<T>(out.data() + i * m * n, m, n).noalias() =
        detail::cmat<T>(a.data().data() + i * m * k, m, k) *
        detail::cmat<T>(b.data().data() + i * k * n, k, n);
  }
  Shape shape = a.dim() == 2 ? Shape{m, n} : Shape{nb, m, n};
  return make_result<T>(std::move(shape), std::move(out), "matmul", {a, b},
                        [a, b, m, k, n, nb](const TensorStorage<T>& o) {
                          auto ga = grad_slot(a);
                          auto gb = grad_slot(b);
                          for (std::int64_t i = 0; i < nb; ++i) {
                            auto g = detail::cmat<T>(o.grad.data() + i * m * n, m, n);
                            if (!ga.empty()) {
                              detail::mat<T>(ga.data() + i * m * k, m, k).noalias() +=
                                  g * detail::cmat<T>(b.data().data() + i * k * n, k, n).transpose();
                            }
                            if (!gb.empty()) {
                              detail::mat<T>(gb.data() + i * k * n, k, n).noalias() +=
                                  detail::cmat<T>(a.data().data() + i * m * k, m, k).transpose() * g;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& t) {
  const MatDims d = mat_dims(t, "transpose2d");
  std::vector<T> out(t.values().size());
  const T* src = t.data().data();
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t r = 0; r < d.rows; ++r) {
      for (std::int64_t c = 0; c < d.cols; ++c) {
        out[static_cast<size_t>(b * d.rows * d.cols + c * d.rows + r)] =
            src[b * d.rows * d.cols + r * d.cols + c];
      }
    }
  }
  Shape shape = t.dim() == 2 ? Shape{d.cols, d.rows} : Shape{d.batch, d.cols, d.rows};
  return make_result<T>(std::move(shape), std::move(out), "transpose2d", {t},
                        [t, d](const TensorStorage<T>& o) {
                          auto g = grad_slot(t);
                          for (std::int64_t b = 0; b < d.batch; ++b) {
                            for (std::int64_t r = 0; r < d.rows; ++r) {
                              for (std::int64_t c = 0; c < d.cols; ++c) {
                                g[static_cast<size_t>(b * d.rows * d.cols + r * d.cols + c)] +=
                                    o.grad[static_cast<size_t>(b * d.rows * d.cols + c * d.rows + r)];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& m) {
  if (m.dim() < 1) throw DimensionError("softmax_rows: empty shape");
  const std::int64_t cols = m.size(-1);
  const std::int64_t rows = m.numel() / cols;
  const T* src = m.data().data();
  std::vector<T> out(m.values().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = src + r * cols;
    T* dst = out.data() + r * cols;
    T hi = row[0];
    for (std::int64_t c = 0; c < cols; ++c) {
      if (!std::isfinite(row[c])) {
        throw NumericError("softmax_rows: non-finite entry at row " + std::to_string(r) +
                           ", column " + std::to_string(c));
      }
      hi = std::max(hi, row[c]);
    }
    T total = 0;
    for (std::int64_t c = 0; c < cols; ++c) total += dst[c] = std::exp(row[c] - hi);
    for (std::int64_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  return make_result<T>(m.shape(), std::move(out), "softmax_rows", {m},
                        [m, rows, cols](const TensorStorage<T>& o) {
                          auto g = grad_slot(m);
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const T* y = o.data.data() + r * cols;
                            const T* gy = o.grad.data() + r * cols;
                            T dot = 0;
                            for (std::int64_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
                            for (std::int64_t c = 0; c < cols; ++c) {
                              g[static_cast<size_t>(r * cols + c)] += y[c] * (gy[c] - dot);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, Shape new_shape) {
  if (numel_of(new_shape) != t.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(t.shape()) + " as " +
                         shape_str(new_shape));
  }
  return make_result<T>(std::move(new_shape), t.values(), "reshape", {t},
                        [t](const TensorStorage<T>& o) {
                          auto g = grad_slot(t);
                          for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  const auto bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result<T>(a.shape(), std::move(out), "add", {a, b},
                        [a, b](const TensorStorage<T>& o) {
                          for (auto* t : {&a, &b}) {
                            auto g = grad_slot(*t);
                            for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.values());
  const auto bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result<T>(a.shape(), std::move(out), "sub", {a, b},
                        [a, b](const TensorStorage<T>& o) {
                          auto ga = grad_slot(a);
                          for (size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
                          auto gb = grad_slot(b);
                          for (size_t i = 0; i < gb.size(); ++i) gb[i] -= o.grad[i];
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  const auto bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result<T>(a.shape(), std::move(out), "mul", {a, b},
                        [a, b](const TensorStorage<T>& o) {
                          auto ga = grad_slot(a);
                          for (size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * b[i];
                          auto gb = grad_slot(b);
                          for (size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * a[i];
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& t, const Tensor<T>& s) {
  if (s.numel() != 1) {
    throw DimensionError("scale: parameter must hold one element, got " + shape_str(s.shape()));
  }
  const T factor = s[0];
  std::vector<T> out(t.values());
  for (auto& v : out) v *= factor;
  return make_result<T>(t.shape(), std::move(out), "scale", {t, s},
                        [t, s](const TensorStorage<T>& o) {
                          const T factor = s[0];
                          auto gt = grad_slot(t);
                          for (size_t i = 0; i < gt.size(); ++i) gt[i] += o.grad[i] * factor;
                          auto gs = grad_slot(s);
                          if (!gs.empty()) {
                            T acc = 0;
                            for (size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * t[i];
                            gs[0] += acc;
                          }
                        });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& t, T c) {
  std::vector<T> out(t.values());
  for (auto& v : out) v *= c;
  return make_result<T>(t.shape(), std::move(out), "scale_by", {t},
                        [t, c](const TensorStorage<T>& o) {
                          auto g = grad_slot(t);
                          for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * c;
                        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& t) {
  std::vector<T> out(t.values());
  for (auto& v : out) v = v > T(0) || v != v ? v : T(0);  // NaN passes through
  return make_result<T>(t.shape(), std::move(out), "relu", {t},
                        [t](const TensorStorage<T>& o) {
                          auto g = grad_slot(t);
                          for (size_t i = 0; i < g.size(); ++i) {
                            if (o.data[i] > T(0)) g[i] += o.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& t) {
  T acc = 0;
  for (T v : t.data()) acc += v;
  return make_result<T>({1}, {acc}, "sum", {t}, [t](const TensorStorage<T>& o) {
    auto g = grad_slot(t);
    for (auto& v : g) v += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& t) {
  T acc = 0;
  for (T v : t.data()) acc += v;
  const T inv = T(1) / static_cast<T>(t.numel());
  return make_result<T>({1}, {acc * inv}, "mean", {t},
                        [t, inv](const TensorStorage<T>& o) {
                          auto g = grad_slot(t);
                          for (auto& v : g) v += o.grad[0] * inv;
                        });
}

template <typename T>
Tensor<T> select_channel(const Tensor<T>& t, std::int64_t c) {
  if (t.dim() != 4) throw DimensionError("select_channel: expected NCHW, got " + shape_str(t.shape()));
  const auto n = t.size(0), ch = t.size(1), hw = t.size(2) * t.size(3);
  if (c < 0 || c >= ch) {
    throw ContractError("select_channel: channel " + std::to_string(c) + " outside [0, " +
                        std::to_string(ch) + ")");
  }
  std::vector<T> out(static_cast<size_t>(n * hw));
  for (std::int64_t b = 0; b < n; ++b) {
    std::copy_n(t.data().data() + (b * ch + c) * hw, hw, out.data() + b * hw);
  }
  return make_result<T>({n, 1, t.size(2), t.size(3)}, std::move(out), "select_channel", {t},
                        [t, n, ch, hw, c](const TensorStorage<T>& o) {
                          auto g = grad_slot(t);
                          for (std::int64_t b = 0; b < n; ++b) {
                            for (std::int64_t i = 0; i < hw; ++i) {
                              g[static_cast<size_t>((b * ch + c) * hw + i)] +=
                                  o.grad[static_cast<size_t>(b * hw + i)];
                            }
                          }
                        });
}

#define DANET_INSTANTIATE(T)                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> transpose2d(const Tensor<T>&);                          \
  template Tensor<T> softmax_rows(const Tensor<T>&);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> scale(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> scale_by(const Tensor<T>&, T);                          \
  template Tensor<T> relu(const Tensor<T>&);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                  \
  template Tensor<T> mean(const Tensor<T>&);                                 \
  template Tensor<T> select_channel(const Tensor<T>&, std::int64_t);

DANET_INSTANTIATE(float)
DANET_INSTANTIATE(double)

}  // namespace danet
