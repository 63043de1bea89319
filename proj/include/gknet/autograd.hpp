#pragma once

// Reverse-mode automatic differentiation over Tensor values. Each operation
// produces a Var that owns its value and a closure that propagates the output
// gradient into the gradients of its inputs. Graphs are built per forward pass
// and released when the last Var referencing them goes away.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gknet/tensor.hpp"

namespace gknet {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Gradient storage, allocated (zeroed) on first use.
  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  // Pointer to the gradient of input i, or null when it needs none.
  T* input_grad(std::size_t i) {
    Node& in = *inputs[i];
    return in.requires_grad ? in.grad_buffer().data() : nullptr;
  }
  const Tensor<T>& input(std::size_t i) const { return inputs[i]->value; }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_->grad.size()) node_->grad.fill(T(0));
  }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Wraps an operation result. The backward closure is kept only when grad
/// recording is enabled and at least one input requires a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const Var<T>& in : inputs)
      if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const Var<T>& in : inputs) n->inputs.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const Var<T>& in : inputs)
      if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (const Var<T>& in : inputs) n->inputs.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

/// Back-propagates from root, seeded with `seed` (ones when omitted).
/// Leaf gradients accumulate across calls until zeroed.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Node<T>& r = *root.node();
  Tensor<T>& g = r.grad_buffer();
  if (seed) {
    GK_REQUIRE(seed->shape() == r.value.shape(), "backward seed shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*seed)[i];
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size()) n->backward(*n);
    // Intermediate gradients are no longer needed once propagated.
    if (n->backward && n != root.node().get()) n->grad = Tensor<T>();
  }
}

}  // namespace gknet
