// SPDX-License-Identifier: Apache-2.0
#include "danet/oracles.hpp"

#include <algorithm>
#include <cmath>

namespace danet::oracle {

Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("oracle::matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  Tensor<double> out = Tensor<double>::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
  return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  double hi = logits.front();
  for (double v : logits) hi = std::max(hi, v);
  std::vector<double> out(logits.size());
  double total = 0;
  for (size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - hi);
  for (auto& v : out) v /= total;
  return out;
}

Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& weight, const Tensor<double>* bias,
                      std::int64_t stride, std::int64_t padding, std::int64_t dilation) {
  const auto n = x.size(0), cin = x.size(1), h = x.size(2), w = x.size(3);
  const auto cout = weight.size(0), k = weight.size(2);
  const auto ho = (h + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const auto wo = (w + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  Tensor<double> out = Tensor<double>::zeros({n, cout, ho, wo});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::int64_t c = 0; c < cin; ++c)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto iy = oy * stride - padding + ky * dilation;
                const auto ix = ox * stride - padding + kx * dilation;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += weight[((o * cin + c) * k + ky) * k + kx] * x[((b * cin + c) * h + iy) * w + ix];
              }
          out[((b * cout + o) * ho + oy) * wo + ox] = acc;
        }
  return out;
}

namespace {

// Feature vector of position p in channel-major [C×H×W] element b.
std::vector<double> position_vector(const Tensor<double>& t, std::int64_t b, std::int64_t p) {
  const auto c = t.size(1), hw = t.size(2) * t.size(3);
  std::vector<double> v(static_cast<size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) v[static_cast<size_t>(ch)] = t[(b * c + ch) * hw + p];
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

AttentionOut position_attention(const Tensor<double>& a, const Conv2dParams<double>& conv_b,
                                const Conv2dParams<double>& conv_c, const Conv2dParams<double>& conv_d,
                                double alpha) {
  const auto bias = [](const Conv2dParams<double>& p) { return p.has_bias ? &p.bias : nullptr; };
  const Tensor<double> B = conv2d(a, conv_b.weight, bias(conv_b), 1, 0, 1);
  const Tensor<double> C = conv2d(a, conv_c.weight, bias(conv_c), 1, 0, 1);
  const Tensor<double> D = conv2d(a, conv_d.weight, bias(conv_d), 1, 0, 1);
  const auto n = a.size(0), ch = a.size(1), positions = a.size(2) * a.size(3);
  AttentionOut out{a.detach(), {}};
  for (std::int64_t b = 0; b < n; ++b) {
    std::vector<std::vector<double>> s(static_cast<size_t>(positions));
    for (std::int64_t j = 0; j < positions; ++j) {
      const auto cj = position_vector(C, b, j);
      std::vector<double> logits(static_cast<size_t>(positions));
      for (std::int64_t i = 0; i < positions; ++i) logits[static_cast<size_t>(i)] = dot(position_vector(B, b, i), cj);
      s[static_cast<size_t>(j)] = softmax(logits);
    }
    for (std::int64_t j = 0; j < positions; ++j) {
      for (std::int64_t c = 0; c < ch; ++c) {
        double acc = 0;
        for (std::int64_t i = 0; i < positions; ++i) {
          acc += s[static_cast<size_t>(j)][static_cast<size_t>(i)] * D[(b * ch + c) * positions + i];
        }
        out.e[(b * ch + c) * positions + j] = alpha * acc + a[(b * ch + c) * positions + j];
      }
    }
    out.map.push_back(std::move(s));
  }
  return out;
}

AttentionOut channel_attention(const Tensor<double>& a, double beta) {
  const auto n = a.size(0), ch = a.size(1), positions = a.size(2) * a.size(3);
  AttentionOut out{a.detach(), {}};
  for (std::int64_t b = 0; b < n; ++b) {
    auto channel = [&](std::int64_t c) {
      std::vector<double> v(static_cast<size_t>(positions));
      for (std::int64_t p = 0; p < positions; ++p) v[static_cast<size_t>(p)] = a[(b * ch + c) * positions + p];
      return v;
    };
    std::vector<std::vector<double>> x(static_cast<size_t>(ch));
    for (std::int64_t j = 0; j < ch; ++j) {
      std::vector<double> logits(static_cast<size_t>(ch));
      for (std::int64_t i = 0; i < ch; ++i) logits[static_cast<size_t>(i)] = dot(channel(i), channel(j));
      x[static_cast<size_t>(j)] = softmax(logits);
    }
    for (std::int64_t j = 0; j < ch; ++j) {
      for (std::int64_t p = 0; p < positions; ++p) {
        double acc = 0;
        for (std::int64_t i = 0; i < ch; ++i) {
          acc += x[static_cast<size_t>(j)][static_cast<size_t>(i)] * a[(b * ch + i) * positions + p];
        }
        out.e[(b * ch + j) * positions + p] = beta * acc + a[(b * ch + j) * positions + p];
      }
    }
    out.map.push_back(std::move(x));
  }
  return out;
}

Tensor<double> upsample_bilinear(const Tensor<double>& x, std::int64_t out_h, std::int64_t out_w) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  Tensor<double> out = Tensor<double>::zeros({n, c, out_h, out_w});
  auto source = [](std::int64_t o, std::int64_t in, std::int64_t outn) {
    return std::max(0.0, (o + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5);
  };
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t oy = 0; oy < out_h; ++oy)
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const double sy = source(oy, h, out_h), sx = source(ox, w, out_w);
        const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(sy), h - 1);
        const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(sx), w - 1);
        const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const double fy = sy - y0, fx = sx - x0;
        auto at = [&](std::int64_t yy, std::int64_t xx) { return x[(p * h + yy) * w + xx]; };
        out[(p * out_h + oy) * out_w + ox] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                             fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      }
  return out;
}

double cross_entropy(const Tensor<double>& logits, const LabelMap& labels, std::int32_t ignore_index) {
  const auto n = logits.size(0), k = logits.size(1), hw = logits.size(2) * logits.size(3);
  double total = 0;
  std::int64_t count = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < hw; ++p) {
      const auto id = labels.ids[static_cast<size_t>(b * hw + p)];
      if (id == ignore_index) continue;
      double denom = 0;
      for (std::int64_t c = 0; c < k; ++c) denom += std::exp(logits[(b * k + c) * hw + p]);
      total += std::log(denom) - logits[(b * k + id) * hw + p];
      ++count;
    }
  return count ? total / static_cast<double>(count) : 0.0;
}

long double poly_lr(long double iter, long double total, long double base, long double power) {
  return base * std::pow(1.0L - iter / total, power);
}

}  // namespace danet::oracle
