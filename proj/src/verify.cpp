// SPDX-License-Identifier: Apache-2.0
#include "danet/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <set>

#include "danet/attention.hpp"
#include "danet/gradcheck.hpp"
#include "danet/model.hpp"
#include "danet/ops.hpp"
#include "danet/oracles.hpp"
#include "danet/train.hpp"

namespace danet {

namespace {

using T64 = Tensor<double>;

T64 leaf(T64 t) { return t.set_requires_grad(true), t; }

T64 rand_t(const Shape& s, Rng& rng, double lo = -1, double hi = 1) { return uniform_tensor<double>(s, rng, lo, hi); }

T64 weighted_sum(const T64& t, Rng& rng) { return sum(mul(t, rand_t(t.shape(), rng))); }

double max_abs_diff(const T64& a, const T64& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::set<std::string> op_kinds(const T64& root) {
  std::set<std::string> out;
  std::vector<const GraphNode<double>*> stack;
  std::set<const GraphNode<double>*> seen;
  if (root.node()) stack.push_back(root.node());
  while (!stack.empty()) {
    const auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    out.insert(n->op_kind);
    for (const auto& in : n->inputs) {
      if (in.node()) stack.push_back(in.node());
    }
  }
  return out;
}

std::vector<std::int64_t> permutation(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(rng.uniform_int(0, i))]);
  return p;
}

PositionAttentionParams<double> random_pam(std::int64_t c, Rng& rng) {
  auto p = make_position_attention<double>(c, 2, rng);
  for (auto* conv : {&p.conv_b, &p.conv_c, &p.conv_d}) {
    for (auto& v : conv->bias.data()) v = rng.uniform(-0.5, 0.5);
  }
  p.alpha[0] = rng.uniform(-1, 1);
  return p;
}

// A gradient check: builds the loss and the tensors to differentiate.
struct GradCase {
  std::function<T64()> loss;
  std::vector<T64> wrt;
};

struct Property {
  std::string name;
  double tolerance;
  std::function<double(Rng&)> forward_error;           // set for forward properties
  std::function<GradCase(Rng&)> grad_case;             // set for gradient checks
  std::vector<std::string> covers;                     // op kinds a gradient check isolates
};

std::vector<Property> properties() {
  std::vector<Property> ps;
  auto fwd = [&](std::string name, double tol, std::function<double(Rng&)> f) {
    ps.push_back({std::move(name), tol, std::move(f), {}});
  };
  auto grad = [&](std::string name, std::function<GradCase(Rng&)> f, std::vector<std::string> covers = {}) {
    ps.push_back({std::move(name), 1e-4, {}, std::move(f), std::move(covers)});
  };

  fwd("pam_identity_at_zero_alpha", 0.0, [](Rng& rng) {
    const auto c = rng.uniform_int(1, 8), h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
    const T64 a = rand_t({1, c, h, w}, rng, -3, 3);
    return max_abs_diff(position_attention_forward(a, make_position_attention<double>(c, 2, rng)).features, a);
  });
  fwd("cam_identity_at_zero_beta", 0.0, [](Rng& rng) {
    const auto c = rng.uniform_int(1, 8), h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
    const T64 a = rand_t({1, c, h, w}, rng, -3, 3);
    return max_abs_diff(channel_attention_forward(a, make_channel_attention<double>()).features, a);
  });
  fwd("pam_matches_scalar_oracle", 1e-6, [](Rng& rng) {
    const auto c = rng.uniform_int(1, 6), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    const T64 a = rand_t({2, c, h, w}, rng);
    const auto p = random_pam(c, rng);
    return max_abs_diff(position_attention_forward(a, p).features,
                        oracle::position_attention(a, p.conv_b, p.conv_c, p.conv_d, p.alpha[0]).e);
  });
  fwd("cam_matches_scalar_oracle", 1e-6, [](Rng& rng) {
    const auto c = rng.uniform_int(1, 6), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    const T64 a = rand_t({2, c, h, w}, rng);
    auto p = make_channel_attention<double>();
    p.beta[0] = rng.uniform(-1, 1);
    return max_abs_diff(channel_attention_forward(a, p).features, oracle::channel_attention(a, p.beta[0]).e);
  });
  fwd("attention_rows_sum_to_one", 1e-5, [](Rng& rng) {
    const auto c = rng.uniform_int(1, 8), h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
    const Tensor<float> a = uniform_tensor<float>({1, c, h, w}, rng, -2, 2);
    double worst = 0;
    for (const auto& m : {position_attention_forward(a, make_position_attention<float>(c, 2, rng)).map.matrix,
                          channel_attention_forward(a, make_channel_attention<float>()).map.matrix}) {
      const auto r = m.size(1);
      for (std::int64_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::int64_t j = 0; j < r; ++j) {
          if (m[i * r + j] < 0) return double(INFINITY);
          s += m[i * r + j];
        }
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
    return worst;
  });
  fwd("pam_spatial_permutation_equivariance", 1e-5, [](Rng& rng) {
    const auto c = rng.uniform_int(1, 6), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    const auto n = h * w;
    const T64 a = rand_t({1, c, h, w}, rng);
    const auto p = random_pam(c, rng);
    const auto perm = permutation(n, rng);
    T64 pa = T64::zeros(a.shape());
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t i = 0; i < n; ++i) pa[ch * n + i] = a[ch * n + perm[static_cast<size_t>(i)]];
    }
    const T64 e = position_attention_forward(a, p).features, pe = position_attention_forward(pa, p).features;
    double worst = 0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(pe[ch * n + i] - e[ch * n + perm[static_cast<size_t>(i)]]));
    }
    return worst;
  });
  fwd("cam_channel_permutation_equivariance", 1e-5, [](Rng& rng) {
    const auto c = rng.uniform_int(1, 6), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    const auto n = h * w;
    const T64 a = rand_t({1, c, h, w}, rng);
    auto p = make_channel_attention<double>();
    p.beta[0] = rng.uniform(-1, 1);
    const auto perm = permutation(c, rng);
    T64 pa = T64::zeros(a.shape());
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t i = 0; i < n; ++i) pa[ch * n + i] = a[perm[static_cast<size_t>(ch)] * n + i];
    }
    const T64 e = channel_attention_forward(a, p).features, pe = channel_attention_forward(pa, p).features;
    double worst = 0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(pe[ch * n + i] - e[perm[static_cast<size_t>(ch)] * n + i]));
    }
    return worst;
  });
  // The query bias shifts each softmax row by a constant, so its gradient is zero.
  fwd("pam_query_bias_gradient_vanishes", 1e-12, [](Rng& rng) {
    const auto c = rng.uniform_int(1, 6), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    const T64 a = rand_t({2, c, h, w}, rng);
    auto p = random_pam(c, rng);
    p.conv_b.bias.zero_grad();
    T64 loss = weighted_sum(position_attention_forward(a, p).features, rng);
    backward(loss);
    double worst = 0;
    const T64 g = p.conv_b.bias.grad_tensor();
    for (double v : g.data()) worst = std::max(worst, std::abs(v));
    return worst;
  });
  fwd("conv2d_matches_sliding_window", 1e-10, [](Rng& rng) {
    const auto k = 2 * rng.uniform_int(0, 1) + 1, dil = rng.uniform_int(1, 2), stride = rng.uniform_int(1, 2);
    const T64 x = rand_t({2, 3, 7, 6}, rng);
    auto p = make_conv<double>(3, 4, k, rng, true, stride, rng.uniform_int(0, 2), dil);
    p.bias = rand_t({4}, rng);
    return max_abs_diff(conv2d(x, p), oracle::conv2d(x, p.weight, &p.bias, p.stride, p.padding, p.dilation));
  });
  fwd("upsample_matches_oracle", 1e-12, [](Rng& rng) {
    const T64 x = rand_t({1, 2, rng.uniform_int(1, 5), rng.uniform_int(1, 5)}, rng);
    const auto oh = rng.uniform_int(1, 9), ow = rng.uniform_int(1, 9);
    return max_abs_diff(upsample_bilinear(x, oh, ow), oracle::upsample_bilinear(x, oh, ow));
  });
  fwd("cross_entropy_matches_oracle", 1e-12, [](Rng& rng) {
    const T64 z = rand_t({2, 4, 3, 3}, rng, -3, 3);
    LabelMap l(2, 3, 3);
    for (auto& id : l.ids) id = rng.bernoulli(0.1) ? kIgnoreIndex : static_cast<std::int32_t>(rng.uniform_int(0, 3));
    return std::abs(cross_entropy(z, l).item() - oracle::cross_entropy(z, l, kIgnoreIndex));
  });
  fwd("poly_lr_matches_long_double", 1e-12, [](Rng& rng) {
    const auto total = rng.uniform_int(1, 100000), it = rng.uniform_int(0, total);
    const double base = rng.uniform(1e-3, 1.0), power = rng.uniform(0.1, 2.0);
    return std::abs(poly_lr(it, total, base, power) -
                    static_cast<double>(oracle::poly_lr(it, total, base, power)));
  });
  fwd("mean_iou_trace_equals_accuracy", 1e-15, [](Rng& rng) {
    LabelMap pred(1, 5, 5), truth(1, 5, 5);
    for (size_t i = 0; i < truth.ids.size(); ++i) {
      truth.ids[i] = static_cast<std::int32_t>(rng.uniform_int(0, 3));
      pred.ids[i] = static_cast<std::int32_t>(rng.uniform_int(0, 3));
    }
    const auto r = mean_iou(pred, truth, 4);
    std::int64_t trace = 0;
    for (std::int64_t c = 0; c < 4; ++c) trace += r.at(c, c);
    return std::abs(static_cast<double>(trace) / 25.0 - r.pixel_accuracy);
  });
  fwd("multi_scale_unit_equals_softmax", 1e-6, [](Rng& rng) {
    ModelConfig cfg;
    cfg.backbone_channels = {4, 4, 8, 8};
    cfg.module_channels = 8;
    Model<double> m(cfg, rng.next_u64());
    const T64 x = rand_t({1, 3, 16, 16}, rng, 0, 1);
    T64 single;
    {
      NoGradGuard g;
      single = channel_softmax(m.forward(x).main_logits);
    }
    return std::max(max_abs_diff(multi_scale_inference(m, x, {1.0}), single),
                    max_abs_diff(multi_scale_inference(m, x, {1.0, 1.0}), single));
  });

  grad("backward_matmul", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3, 4}, rng)), b = leaf(rand_t({2, 4, 2}, rng));
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(matmul(a, b), r); }, {a, b}};
  }, {"matmul"});
  grad("backward_transpose2d", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3, 4}, rng));
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(transpose2d(a), r); }, {a}};
  }, {"transpose2d"});
  grad("backward_softmax_rows", [](Rng& rng) {
    T64 a = leaf(rand_t({3, 5}, rng, -2, 2));
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(softmax_rows(a), r); }, {a}};
  }, {"softmax_rows"});
  // Reduced by a bare sum so each check involves a single other op.
  grad("backward_sum", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3}, rng));
    return GradCase{[=] { return sum(a); }, {a}};
  }, {"sum"});
  grad("backward_mean", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3}, rng));
    return GradCase{[=] { return mean(a); }, {a}};
  }, {"mean"});
  grad("backward_add", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3}, rng)), b = leaf(rand_t({2, 3}, rng));
    return GradCase{[=] { return sum(add(a, b)); }, {a, b}};
  }, {"add"});
  grad("backward_sub", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3}, rng)), b = leaf(rand_t({2, 3}, rng));
    return GradCase{[=] { return sum(sub(a, b)); }, {a, b}};
  }, {"sub"});
  grad("backward_mul", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3}, rng)), b = leaf(rand_t({2, 3}, rng));
    return GradCase{[=] { return sum(mul(a, b)); }, {a, b}};
  }, {"mul"});
  grad("backward_scale", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3}, rng)), k = leaf(rand_t({1}, rng));
    return GradCase{[=] { return sum(scale(a, k)); }, {a, k}};
  }, {"scale"});
  grad("backward_scale_by", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3}, rng));
    const double k = rng.uniform(-2, 2);
    return GradCase{[=] { return sum(scale_by(a, k)); }, {a}};
  }, {"scale_by"});
  grad("backward_reshape", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3}, rng));
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(reshape(a, {3, 2}), r); }, {a}};
  }, {"reshape"});
  grad("backward_relu", [](Rng& rng) {
    T64 a = rand_t({2, 7}, rng);
    for (auto& v : a.data()) v += v >= 0 ? 0.1 : -0.1;  // stay clear of the kink
    a = leaf(a);
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(relu(a), r); }, {a}};
  }, {"relu"});
  grad("backward_select_channel", [](Rng& rng) {
    T64 a = leaf(rand_t({2, 3, 2, 2}, rng));
    const auto c = rng.uniform_int(0, 2);
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(select_channel(a, c), r); }, {a}};
  }, {"select_channel"});
  grad("backward_conv2d", [](Rng& rng) {
    const auto k = 2 * rng.uniform_int(0, 1) + 1;
    T64 x = leaf(rand_t({2, 2, 5, 5}, rng));
    auto p = make_conv<double>(2, 3, k, rng, true, rng.uniform_int(1, 2), rng.uniform_int(0, 2), rng.uniform_int(1, 2));
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(conv2d(x, p), r); }, {x, p.weight, p.bias}};
  }, {"conv2d"});
  grad("backward_batch_norm", [](Rng& rng) {
    T64 x = leaf(rand_t({3, 2, 2, 3}, rng));
    auto bn = make_batch_norm<double>(2);
    bn.gamma = leaf(rand_t({2}, rng, 0.5, 1.5));
    bn.beta = leaf(rand_t({2}, rng));
    const auto seed = rng.next_u64();
    return GradCase{[=]() mutable { Rng r(seed); return weighted_sum(batch_norm(x, bn, true), r); },
                    {x, bn.gamma, bn.beta}};
  }, {"batch_norm"});
  grad("backward_batch_norm_eval", [](Rng& rng) {
    T64 x = leaf(rand_t({2, 2, 2, 2}, rng));
    auto bn = make_batch_norm<double>(2);
    bn.gamma = leaf(rand_t({2}, rng, 0.5, 1.5));
    bn.beta = leaf(rand_t({2}, rng));
    bn.running_mean = rand_t({2}, rng);
    bn.running_var = rand_t({2}, rng, 0.5, 2.0);
    const auto seed = rng.next_u64();
    return GradCase{[=]() mutable { Rng r(seed); return weighted_sum(batch_norm(x, bn, false), r); },
                    {x, bn.gamma, bn.beta}};
  }, {"batch_norm_eval"});
  grad("backward_upsample_bilinear", [](Rng& rng) {
    T64 x = leaf(rand_t({1, 2, rng.uniform_int(1, 4), rng.uniform_int(1, 4)}, rng));
    const auto oh = rng.uniform_int(1, 8), ow = rng.uniform_int(1, 8);
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(upsample_bilinear(x, oh, ow), r); }, {x}};
  }, {"upsample_bilinear"});
  grad("backward_cross_entropy", [](Rng& rng) {
    T64 z = leaf(rand_t({2, 4, 2, 3}, rng, -2, 2));
    LabelMap l(2, 2, 3);
    for (auto& id : l.ids) id = rng.bernoulli(0.1) ? kIgnoreIndex : static_cast<std::int32_t>(rng.uniform_int(0, 3));
    return GradCase{[=] { return cross_entropy(z, l); }, {z}};
  }, {"cross_entropy"});
  grad("backward_position_attention", [](Rng& rng) {
    const auto c = rng.uniform_int(1, 5), h = rng.uniform_int(1, 3), w = rng.uniform_int(1, 3);
    T64 a = leaf(rand_t({2, c, h, w}, rng));
    const auto p = random_pam(c, rng);
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(position_attention_forward(a, p).features, r); },
                    {a, p.conv_b.weight, p.conv_c.weight, p.conv_c.bias, p.conv_d.weight, p.conv_d.bias, p.alpha}};
  });
  grad("backward_channel_attention", [](Rng& rng) {
    const auto c = rng.uniform_int(2, 5), h = rng.uniform_int(1, 3), w = rng.uniform_int(1, 3);
    T64 a = leaf(rand_t({2, c, h, w}, rng, -0.7, 0.7));
    auto p = make_channel_attention<double>();
    p.beta[0] = rng.uniform(-1, 1);
    const auto seed = rng.next_u64();
    return GradCase{[=] { Rng r(seed); return weighted_sum(channel_attention_forward(a, p).features, r); },
                    {a, p.beta}};
  });
  grad("backward_fusion", [](Rng& rng) {
    const auto c = rng.uniform_int(1, 4), m = rng.uniform_int(1, 4);
    T64 ep = leaf(rand_t({2, c, 2, 3}, rng)), ec = leaf(rand_t({2, c, 2, 3}, rng));
    FusionParams<double> p;
    p.conv_pam = make_conv_block<double>(c, m, rng);
    p.conv_cam = make_conv_block<double>(c, m, rng);
    p.conv_out = make_conv<double>(m, 3, 1, rng, true);
    const auto seed = rng.next_u64();
    return GradCase{[=]() mutable { Rng r(seed); return weighted_sum(fuse(ep, ec, p, true), r); },
                    {ep, ec, p.conv_pam.conv.weight, p.conv_cam.bn.gamma, p.conv_out.weight, p.conv_out.bias}};
  });
  return ps;
}

}  // namespace

std::vector<PropertyResult> run_verification(std::uint64_t seed, int trials) {
  std::vector<PropertyResult> results;
  const Rng root(seed);
  std::uint64_t stream = 0;
  for (const auto& prop : properties()) {
    PropertyResult r;
    r.name = prop.name;
    r.tolerance = prop.tolerance;
    r.covers = prop.covers;
    Rng rng = root.split(stream++);
    std::set<std::string> ops;
    try {
      for (int t = 0; t < trials; ++t) {
        double err;
        if (prop.forward_error) {
          err = prop.forward_error(rng);
        } else {
          const auto c = prop.grad_case(rng);
          err = gradient_error<double>(c.loss, c.wrt);
          for (const auto& k : op_kinds(c.loss())) ops.insert(k);
        }
        if (!(err <= r.worst)) r.worst = err;  // NaN sticks
      }
      r.passed = r.worst <= prop.tolerance;
      r.ops.assign(ops.begin(), ops.end());
      if (!r.passed && !ops.empty()) {
        r.detail = "ops on the checked graph:";
        for (const auto& k : ops) r.detail += " " + k;
      }
    } catch (const std::exception& e) {
      r.passed = false;
      r.worst = INFINITY;
      r.detail = e.what();
    }
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<std::string> suspect_ops(const std::vector<PropertyResult>& results) {
  std::optional<std::set<std::string>> common;
  std::set<std::string> cleared;
  for (const auto& r : results) {
    if (r.ops.empty()) continue;
    if (r.passed) {
      cleared.insert(r.covers.begin(), r.covers.end());
      continue;
    }
    const std::set<std::string> mine(r.ops.begin(), r.ops.end());
    if (!common) {
      common = mine;
    } else {
      std::set<std::string> keep;
      std::set_intersection(common->begin(), common->end(), mine.begin(), mine.end(), std::inserter(keep, keep.end()));
      common = std::move(keep);
    }
  }
  std::vector<std::string> out;
  if (common) {
    for (const auto& k : *common) {
      if (!cleared.count(k)) out.push_back(k);
    }
  }
  return out;
}

}  // namespace danet
