// SPDX-License-Identifier: Apache-2.0
#include "danet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "danet/ops.hpp"
#include "eigen_maps.hpp"

namespace danet {

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                             std::int64_t padding, std::int64_t dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

template <typename T>
Conv2dParams<T> make_conv(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, Rng& rng,
                          bool bias, std::int64_t stride, std::int64_t padding,
                          std::int64_t dilation) {
  Conv2dParams<T> p;
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in_ch * kernel * kernel));
  std::vector<T> w(static_cast<size_t>(out_ch * in_ch * kernel * kernel));
  for (auto& v : w) v = static_cast<T>(std_dev * rng.normal());
  p.weight = Tensor<T>({out_ch, in_ch, kernel, kernel}, std::move(w));
  p.weight.set_requires_grad(true);
  p.has_bias = bias;
  p.bias = Tensor<T>::zeros({out_ch});
  p.bias.set_requires_grad(bias);
  p.stride = stride;
  p.padding = padding;
  p.dilation = dilation;
  return p;
}

namespace {

struct ConvGeom {
  std::int64_t n, cin, h, w, cout, k, ho, wo, stride, pad, dil;
  std::int64_t patch() const { return cin * k * k; }
  std::int64_t out_hw() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const auto ohw = g.out_hw();
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * ohw;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky * g.dil;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx * g.dil;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  const auto ohw = g.out_hw();
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * ohw;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = dx + (c * g.h + iy) * g.w;
          const T* src = row + oy * g.wo;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx * g.dil;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& p) {
  if (input.dim() != 4) throw DimensionError("conv2d: expected NCHW input, got " + shape_str(input.shape()));
  if (p.weight.dim() != 4 || p.weight.size(2) != p.weight.size(3)) {
    throw DimensionError("conv2d: weight must be [out x in x k x k], got " + shape_str(p.weight.shape()));
  }
  if (input.size(1) != p.in_channels()) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " has " +
                         std::to_string(input.size(1)) + " channels, weight " +
                         shape_str(p.weight.shape()) + " expects " + std::to_string(p.in_channels()));
  }
  if (p.stride < 1 || p.dilation < 1 || p.padding < 0) {
    throw DimensionError("conv2d: stride and dilation must be >= 1, padding >= 0");
  }
  ConvGeom g{input.size(0), input.size(1), input.size(2), input.size(3), p.out_channels(), p.kernel(),
             0, 0, p.stride, p.padding, p.dilation};
  g.ho = conv_out_extent(g.h, g.k, g.stride, g.pad, g.dil);
  g.wo = conv_out_extent(g.w, g.k, g.stride, g.pad, g.dil);
  if (g.ho < 1 || g.wo < 1) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " gives non-positive output extent");
  }

  const auto patch = g.patch(), ohw = g.out_hw(), in_sz = g.cin * g.h * g.w;
  auto cols = std::make_shared<std::vector<T>>();
  if (!g.pointwise()) {
    cols->resize(static_cast<size_t>(g.n * patch * ohw));
    for (std::int64_t b = 0; b < g.n; ++b) {
      im2col(input.data().data() + b * in_sz, g, cols->data() + b * patch * ohw);
    }
  }
  const T* x = input.data().data();
  auto sample_cols = [g, patch, ohw, in_sz, x, cols](std::int64_t b) -> const T* {
    return g.pointwise() ? x + b * in_sz : cols->data() + b * patch * ohw;
  };

  std::vector<T> out(static_cast<size_t>(g.n * g.cout * ohw));
  auto w = detail::cmat<T>(p.weight.data().data(), g.cout, patch);
  for (std::int64_t b = 0; b < g.n; ++b) {
    auto y = detail::mat<T>(out.data() + b * g.cout * ohw, g.cout, ohw);
    y.noalias() = w * detail::cmat<T>(sample_cols(b), patch, ohw);
    if (p.has_bias) {
      for (std::int64_t o = 0; o < g.cout; ++o) y.row(o).array() += p.bias[o];
    }
  }

  std::vector<Tensor<T>> inputs{input, p.weight};
  if (p.has_bias) inputs.push_back(p.bias);
  Tensor<T> weight = p.weight, bias = p.bias;
  const bool has_bias = p.has_bias;
  return make_result<T>(
      {g.n, g.cout, g.ho, g.wo}, std::move(out), "conv2d", std::move(inputs),
      [input, weight, bias, has_bias, g, patch, ohw, in_sz, cols](const TensorStorage<T>& o) {
        auto gx = grad_slot(input);
        auto gw = grad_slot(weight);
        auto gb = has_bias ? grad_slot(bias) : std::span<T>{};
        auto w = detail::cmat<T>(weight.data().data(), g.cout, patch);
        std::vector<T> dcols(gx.empty() || g.pointwise() ? 0 : static_cast<size_t>(patch * ohw));
        for (std::int64_t b = 0; b < g.n; ++b) {
          auto dy = detail::cmat<T>(o.grad.data() + b * g.cout * ohw, g.cout, ohw);
          const T* c = g.pointwise() ? input.data().data() + b * in_sz : cols->data() + b * patch * ohw;
          if (!gw.empty()) {
            detail::mat<T>(gw.data(), g.cout, patch).noalias() +=
                dy * detail::cmat<T>(c, patch, ohw).transpose();
          }
          if (!gb.empty()) {
            // Plain loop: Eigen's vectorised sum() peels by address, so its
            // rounding would depend on where the buffer happens to live.
            const T* row = o.grad.data() + b * g.cout * ohw;
            for (std::int64_t oc = 0; oc < g.cout; ++oc, row += ohw) {
              T acc = 0;
              for (std::int64_t i = 0; i < ohw; ++i) acc += row[i];
              gb[static_cast<size_t>(oc)] += acc;
            }
          }
          if (!gx.empty()) {
            if (g.pointwise()) {
              detail::mat<T>(gx.data() + b * in_sz, patch, ohw).noalias() += w.transpose() * dy;
            } else {
              detail::mat<T>(dcols.data(), patch, ohw).noalias() = w.transpose() * dy;
              col2im(dcols.data(), g, gx.data() + b * in_sz);
            }
          }
        }
      });
}

template <typename T>
BatchNormParams<T> make_batch_norm(std::int64_t channels) {
  BatchNormParams<T> p;
  p.gamma = Tensor<T>::ones({channels});
  p.gamma.set_requires_grad(true);
  p.beta = Tensor<T>::zeros({channels});
  p.beta.set_requires_grad(true);
  p.running_mean = Tensor<T>::zeros({channels});
  p.running_var = Tensor<T>::ones({channels});
  return p;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormParams<T>& p, bool training) {
  if (input.dim() != 4 || input.size(1) != p.channels()) {
    throw DimensionError("batch_norm: input " + shape_str(input.shape()) + " does not have " +
                         std::to_string(p.channels()) + " channels");
  }
  const auto n = input.size(0), ch = input.size(1), hw = input.size(2) * input.size(3);
  const auto count = n * hw;
  const T* x = input.data().data();

  // Per-channel mean and inverse standard deviation used for this call.
  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(ch));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(ch));
  for (std::int64_t c = 0; c < ch; ++c) {
    if (training) {
      double s = 0, ss = 0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* row = x + (b * ch + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += row[i];
      }
      const double mu = s / static_cast<double>(count);
      for (std::int64_t b = 0; b < n; ++b) {
        const T* row = x + (b * ch + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) ss += (row[i] - mu) * (row[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      (*mean)[c] = static_cast<T>(mu);
      (*inv_std)[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(p.eps)));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      p.running_mean[c] = static_cast<T>((1 - p.momentum) * p.running_mean[c] + p.momentum * mu);
      p.running_var[c] = static_cast<T>((1 - p.momentum) * p.running_var[c] + p.momentum * unbiased);
    } else {
      (*mean)[c] = p.running_mean[c];
      (*inv_std)[c] = T(1) / std::sqrt(p.running_var[c] + p.eps);
    }
  }

  std::vector<T> out(input.values().size());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t c = 0; c < ch; ++c) {
      const T scale = (*inv_std)[c] * p.gamma[c];
      const T shift = p.beta[c] - (*mean)[c] * scale;
      const T* src = x + (b * ch + c) * hw;
      T* dst = out.data() + (b * ch + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] * scale + shift;
    }
  }

  Tensor<T> gamma = p.gamma, beta = p.beta;
  return make_result<T>(
      input.shape(), std::move(out), training ? "batch_norm" : "batch_norm_eval",
      {input, gamma, beta},
      [input, gamma, beta, mean, inv_std, n, ch, hw, count, training](const TensorStorage<T>& o) {
        auto gx = grad_slot(input);
        auto gg = grad_slot(gamma);
        auto gbeta = grad_slot(beta);
        const T* x = input.data().data();
        for (std::int64_t c = 0; c < ch; ++c) {
          const T mu = (*mean)[c], is = (*inv_std)[c];
          T sum_dy = 0, sum_dy_xhat = 0;
          for (std::int64_t b = 0; b < n; ++b) {
            const T* xr = x + (b * ch + c) * hw;
            const T* gr = o.grad.data() + (b * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              sum_dy += gr[i];
              sum_dy_xhat += gr[i] * (xr[i] - mu) * is;
            }
          }
          if (!gg.empty()) gg[static_cast<size_t>(c)] += sum_dy_xhat;
          if (!gbeta.empty()) gbeta[static_cast<size_t>(c)] += sum_dy;
          if (gx.empty()) continue;
          const T k = gamma[c] * is;
          const T inv_count = T(1) / static_cast<T>(count);
          for (std::int64_t b = 0; b < n; ++b) {
            const T* xr = x + (b * ch + c) * hw;
            const T* gr = o.grad.data() + (b * ch + c) * hw;
            T* dx = gx.data() + (b * ch + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              if (training) {
                const T xhat = (xr[i] - mu) * is;
                dx[i] += k * (gr[i] - inv_count * sum_dy - xhat * inv_count * sum_dy_xhat);
              } else {
                dx[i] += k * gr[i];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> ConvBlock<T>::operator()(const Tensor<T>& x, bool training) {
  Tensor<T> y = conv2d(x, conv);
  if (!normalize) return y;
  return relu(batch_norm(y, bn, training));
}

template <typename T>
ConvBlock<T> make_conv_block(std::int64_t in_ch, std::int64_t out_ch, Rng& rng, std::int64_t kernel,
                             std::int64_t stride, std::int64_t dilation) {
  ConvBlock<T> b;
  b.conv = make_conv<T>(in_ch, out_ch, kernel, rng, false, stride, dilation * (kernel / 2), dilation);
  b.bn = make_batch_norm<T>(out_ch);
  return b;
}

template struct ConvBlock<float>;
template struct ConvBlock<double>;
template ConvBlock<float> make_conv_block<float>(std::int64_t, std::int64_t, Rng&, std::int64_t,
                                                 std::int64_t, std::int64_t);
template ConvBlock<double> make_conv_block<double>(std::int64_t, std::int64_t, Rng&, std::int64_t,
                                                   std::int64_t, std::int64_t);

namespace {

// Source index pair and weight for one output coordinate, half-pixel centres.
struct Tap {
  std::int64_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w) {
  if (input.dim() != 4) throw DimensionError("upsample_bilinear: expected NCHW, got " + shape_str(input.shape()));
  if (out_h < 1 || out_w < 1) throw DimensionError("upsample_bilinear: output extents must be >= 1");
  const auto n = input.size(0), ch = input.size(1), h = input.size(2), w = input.size(3);
  if (out_h == h && out_w == w) {
    return reshape(input, input.shape());  // identity, keeps the graph link
  }
  auto ty = std::make_shared<std::vector<Tap>>(bilinear_taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(bilinear_taps(w, out_w));
  std::vector<T> out(static_cast<size_t>(n * ch * out_h * out_w));
  const T* x = input.data().data();
  for (std::int64_t p = 0; p < n * ch; ++p) {
    const T* src = x + p * h * w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[static_cast<size_t>(oy)];
      const T fy = static_cast<T>(a.frac);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = (*tx)[static_cast<size_t>(ox)];
        const T fx = static_cast<T>(b.frac);
        const T top = src[a.i0 * w + b.i0] * (1 - fx) + src[a.i0 * w + b.i1] * fx;
        const T bot = src[a.i1 * w + b.i0] * (1 - fx) + src[a.i1 * w + b.i1] * fx;
        dst[oy * out_w + ox] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return make_result<T>({n, ch, out_h, out_w}, std::move(out), "upsample_bilinear", {input},
                        [input, ty, tx, n, ch, h, w, out_h, out_w](const TensorStorage<T>& o) {
                          auto g = grad_slot(input);
                          for (std::int64_t p = 0; p < n * ch; ++p) {
                            T* dst = g.data() + p * h * w;
                            const T* gy = o.grad.data() + p * out_h * out_w;
                            for (std::int64_t oy = 0; oy < out_h; ++oy) {
                              const Tap& a = (*ty)[static_cast<size_t>(oy)];
                              const T fy = static_cast<T>(a.frac);
                              for (std::int64_t ox = 0; ox < out_w; ++ox) {
                                const Tap& b = (*tx)[static_cast<size_t>(ox)];
                                const T fx = static_cast<T>(b.frac);
                                const T v = gy[oy * out_w + ox];
                                dst[a.i0 * w + b.i0] += v * (1 - fy) * (1 - fx);
                                dst[a.i0 * w + b.i1] += v * (1 - fy) * fx;
                                dst[a.i1 * w + b.i0] += v * fy * (1 - fx);
                                dst[a.i1 * w + b.i1] += v * fy * fx;
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& labels, std::int32_t ignore_index) {
  if (logits.dim() != 4) throw DimensionError("cross_entropy: expected NKHW logits, got " + shape_str(logits.shape()));
  const auto n = logits.size(0), k = logits.size(1), hw = logits.size(2) * logits.size(3);
  if (labels.n != n || labels.h != logits.size(2) || labels.w != logits.size(3)) {
    throw DimensionError("cross_entropy: labels [" + std::to_string(labels.n) + "x" +
                         std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                         "] do not match logits " + shape_str(logits.shape()));
  }
  for (size_t i = 0; i < labels.ids.size(); ++i) {
    const auto id = labels.ids[i];
    if (id != ignore_index && (id < 0 || id >= k)) {
      throw ContractError("cross_entropy: label " + std::to_string(id) + " at pixel " +
                          std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const T* z = logits.data().data();
  // Softmax probabilities are cached for the backward rule.
  auto probs = std::make_shared<std::vector<T>>(logits.values().size());
  double total = 0;
  std::int64_t counted = 0;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < hw; ++i) {
      T hi = z[b * k * hw + i];
      for (std::int64_t c = 1; c < k; ++c) hi = std::max(hi, z[(b * k + c) * hw + i]);
      T denom = 0;
      for (std::int64_t c = 0; c < k; ++c) {
        const T e = std::exp(z[(b * k + c) * hw + i] - hi);
        (*probs)[static_cast<size_t>((b * k + c) * hw + i)] = e;
        denom += e;
      }
      for (std::int64_t c = 0; c < k; ++c) (*probs)[static_cast<size_t>((b * k + c) * hw + i)] /= denom;
      const auto id = labels.ids[static_cast<size_t>(b * hw + i)];
      if (id == ignore_index) continue;
      total += -(static_cast<double>(z[(b * k + id) * hw + i] - hi) - std::log(static_cast<double>(denom)));
      ++counted;
    }
  }
  const T loss = counted ? static_cast<T>(total / static_cast<double>(counted)) : T(0);
  auto ids = std::make_shared<std::vector<std::int32_t>>(labels.ids);
  return make_result<T>({1}, {loss}, "cross_entropy", {logits},
                        [logits, probs, ids, n, k, hw, counted, ignore_index](const TensorStorage<T>& o) {
                          auto g = grad_slot(logits);
                          if (counted == 0) return;
                          const T scale = o.grad[0] / static_cast<T>(counted);
                          for (std::int64_t b = 0; b < n; ++b) {
                            for (std::int64_t i = 0; i < hw; ++i) {
                              const auto id = (*ids)[static_cast<size_t>(b * hw + i)];
                              if (id == ignore_index) continue;
                              for (std::int64_t c = 0; c < k; ++c) {
                                const auto idx = static_cast<size_t>((b * k + c) * hw + i);
                                g[idx] += scale * ((*probs)[idx] - (c == id ? T(1) : T(0)));
                              }
                            }
                          }
                        });
}

#define DANET_INSTANTIATE(T)                                                                    \
  template Conv2dParams<T> make_conv<T>(std::int64_t, std::int64_t, std::int64_t, Rng&, bool,   \
                                        std::int64_t, std::int64_t, std::int64_t);              \
  template Tensor<T> conv2d(const Tensor<T>&, const Conv2dParams<T>&);                          \
  template BatchNormParams<T> make_batch_norm<T>(std::int64_t);                                 \
  template Tensor<T> batch_norm(const Tensor<T>&, BatchNormParams<T>&, bool);                   \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, std::int64_t, std::int64_t);           \
  template Tensor<T> cross_entropy(const Tensor<T>&, const LabelMap&, std::int32_t);

DANET_INSTANTIATE(float)
DANET_INSTANTIATE(double)

}  // namespace danet
