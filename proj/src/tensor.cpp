// SPDX-License-Identifier: Apache-2.0
#include "danet/tensor.hpp"

#include <unordered_set>

namespace danet {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
thread_local bool t_grad_enabled = true;
std::string g_fault_op;
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace debug {
void inject_backward_fault(const std::string& op_kind) { g_fault_op = op_kind; }
void clear_backward_fault() { g_fault_op.clear(); }
const std::string& backward_fault() { return g_fault_op; }
}  // namespace debug

template <typename T>
void backward(Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order; reversed, every node
  // runs after all of its consumers.
  std::vector<TensorStorage<T>*> order;
  std::unordered_set<TensorStorage<T>*> seen;
  std::vector<std::pair<TensorStorage<T>*, size_t>> stack;
  stack.emplace_back(&loss.storage(), 0);
  seen.insert(&loss.storage());
  while (!stack.empty()) {
    auto& [s, next] = stack.back();
    if (s->node && next < s->node->inputs.size()) {
      TensorStorage<T>* child = &s->node->inputs[next++].storage();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(s);
    stack.pop_back();
  }

  auto& ls = loss.storage();
  if (ls.grad.empty()) ls.grad.assign(1, T(0));
  ls.grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorStorage<T>* s = *it;
    if (!s->node || s->grad.empty()) continue;
    if (!g_fault_op.empty() && s->node->op_kind == g_fault_op) {
      for (auto& g : s->grad) g *= T(2);
    }
    s->node->backward(*s);
  }
}

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<T> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(shape, std::move(v));
}

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng, double std_dev) {
  std::vector<T> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(std_dev * rng.normal());
  return Tensor<T>(shape, std::move(v));
}

template Tensor<float> uniform_tensor<float>(const Shape&, Rng&, double, double);
template Tensor<double> uniform_tensor<double>(const Shape&, Rng&, double, double);
template Tensor<float> normal_tensor<float>(const Shape&, Rng&, double);
template Tensor<double> normal_tensor<double>(const Shape&, Rng&, double);

template void backward<float>(Tensor<float>&);
template void backward<double>(Tensor<double>&);

}  // namespace danet
