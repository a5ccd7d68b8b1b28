// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over Tensor values. A graph is only
// recorded when at least one input requires a gradient, so inference with
// constant inputs and frozen parameters builds nothing.

#ifndef RGBT_AUTOGRAD_HPP_
#define RGBT_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rgbt/tensor.hpp"

namespace rgbt {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  const Shape& shape() const { return value.shape(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

/// Leaf node that accumulates gradients across backward passes.
template <typename T>
Var<T> leaf(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Builds an op node. `fn` receives the node after its gradient is filled and
/// must accumulate into the gradients of those inputs that require one.
template <typename T, typename Fn>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, Fn&& fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled())
    for (const auto& in : inputs)
      if (in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::forward<Fn>(fn);
  }
  return n;
}

/// Runs the reverse pass from a scalar `root`, then releases the graph.
/// Leaf gradients persist until the caller zeroes them.
template <typename T>
void backward(const Var<T>& root) {
  if (!root->requires_grad) return;
  if (root->value.size() != 1) throw ShapeError("backward() needs a scalar root");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    if (!n->backward_fn) continue;
    n->backward_fn = nullptr;
    n->inputs.clear();
    n->grad = Tensor<T>();
  }
}

}  // namespace rgbt

#endif  // RGBT_AUTOGRAD_HPP_
