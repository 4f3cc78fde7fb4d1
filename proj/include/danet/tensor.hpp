// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations that read a
// tensor with requires_grad set record a GraphNode on their result; calling
// backward() on a scalar result walks those nodes in reverse topological
// order and accumulates gradients (+=) into every reachable tensor that
// requires them. Callers zero gradients between optimisation steps.
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "danet/errors.hpp"
#include "danet/rng.hpp"

namespace danet {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage;

template <typename T>
class Tensor;

template <typename T>
struct GraphNode {
  std::string op_kind;
  std::vector<Tensor<T>> inputs;
  // Reads out.grad (and out.data if needed) and accumulates into the inputs.
  // Forward intermediates the rule needs are captured by the closure.
  std::function<void(const TensorStorage<T>& out)> backward;
};

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty means absent
  bool requires_grad = false;
  std::shared_ptr<GraphNode<T>> node;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : s_(std::make_shared<TensorStorage<T>>()) { s_->shape = {0}; }

  Tensor(Shape shape, std::vector<T> data) : s_(std::make_shared<TensorStorage<T>>()) {
    for (auto e : shape) {
      if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    s_->shape = std::move(shape);
    s_->data = std::move(data);
  }

  static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }
  static Tensor ones(const Shape& shape) { return full(shape, T(1)); }
  static Tensor full(const Shape& shape, T value) {
    return Tensor(shape, std::vector<T>(static_cast<size_t>(numel_of(shape)), value));
  }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return s_->shape; }
  std::int64_t dim() const { return static_cast<std::int64_t>(s_->shape.size()); }
  std::int64_t size(std::int64_t axis) const {
    return s_->shape.at(static_cast<size_t>(axis < 0 ? axis + dim() : axis));
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->data.size()); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  std::vector<T> values() const { return s_->data; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
  }
  T& operator[](std::int64_t i) { return s_->data[static_cast<size_t>(i)]; }
  T operator[](std::int64_t i) const { return s_->data[static_cast<size_t>(i)]; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<T> grad() { return s_->grad; }
  std::span<const T> grad() const { return s_->grad; }
  /// Gradient as a detached tensor; zeros when absent.
  Tensor grad_tensor() const {
    return has_grad() ? Tensor(shape(), s_->grad) : zeros(shape());
  }
  void zero_grad() { s_->grad.clear(); }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (!on) s_->grad.clear();
    return *this;
  }

  const GraphNode<T>* node() const { return s_->node.get(); }

  /// Copy of the values as a graph-free leaf.
  Tensor detach() const { return Tensor(shape(), s_->data); }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  TensorStorage<T>& storage() const { return *s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

/// Whether new operations record graph nodes on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Gradient slot of `t`, allocated as zeros on first use. Empty span when t
/// does not require grad.
template <typename T>
std::span<T> grad_slot(const Tensor<T>& t) {
  auto& s = t.storage();
  if (!s.requires_grad) return {};
  if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
  return s.grad;
}

/// Builds an op result, attaching a graph node when any input needs gradients.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string op_kind,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const TensorStorage<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<GraphNode<T>>();
  node->op_kind = std::move(op_kind);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  auto& s = out.storage();
  s.requires_grad = true;
  s.node = std::move(node);
  return out;
}

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0);

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng, double std_dev = 1.0);

/// Reverse-mode sweep from a single-element loss.
template <typename T>
void backward(Tensor<T>& loss);

namespace debug {
/// Test fixture: the backward rule of `op_kind` is corrupted (its incoming
/// gradient doubled) until cleared. Used to prove the verification suite
/// catches a wrong rule.
void inject_backward_fault(const std::string& op_kind);
void clear_backward_fault();
const std::string& backward_fault();
}  // namespace debug

}  // namespace danet
