#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Every op builds a Node holding its forward value and a closure that pushes
// the node's gradient into its parents. backward() walks the DAG in reverse
// topological order exactly once. A graph is confined to one thread.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "ssfc/tensor.hpp"

namespace ssfc {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph construction for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  std::string op = "leaf";
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (!has_grad) {
      grad = Tensor<T>::zeros(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

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
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->has_grad; }
  const std::string& op() const { return node_->op; }

  /// Gradient accumulated by backward(); zeros if never touched.
  Tensor<T> grad() const {
    if (!node_->has_grad) return Tensor<T>::zeros(node_->value.shape());
    return node_->grad;
  }

  void zero_grad() {
    node_->grad = Tensor<T>();
    node_->has_grad = false;
  }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The finiteness check is a hard error: it names the op
/// so the first non-finite tensor in a forward pass is identifiable.
template <typename T>
Var<T> make_result(std::string op, Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + op + " with shape " + to_string(value.shape()));
  }
  auto n = std::make_shared<Node<T>>();
  n->op = std::move(op);
  n->value = std::move(value);
  bool any = false;
  if (grad_enabled()) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
/// Intermediate gradients and saved values are released as the walk proceeds,
/// so a graph supports a single backward pass.
template <typename T>
void backward(const Var<T>& root, T seed = T(1)) {
  if (root.size() != 1) {
    throw ShapeError("backward requires a scalar root, got shape " + to_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward) continue;  // leaf
    if (n->has_grad) n->backward(*n);
    n->backward = nullptr;
    n->grad = Tensor<T>();
    n->has_grad = false;
  }
}

/// p <- p - lr * g for every parameter; gradients are left in place.
template <typename T>
void sgd_step(std::vector<Var<T>>& params, T lr) {
  if (lr == T(0)) return;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    const auto& g = p.node()->grad;
    auto& v = p.mutable_value();
    if (g.shape() != v.shape()) {
      throw ShapeError("sgd_step: gradient shape " + to_string(g.shape()) + " does not match parameter shape " +
                       to_string(v.shape()));
    }
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

/// Tensor-level update rule, for callers holding plain arrays.
template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, T lr) {
  if (param.shape() != grad.shape()) {
    throw ShapeError("sgd_step: gradient shape " + to_string(grad.shape()) + " does not match parameter shape " +
                     to_string(param.shape()));
  }
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

template <typename T>
void zero_grad(std::vector<Var<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace ssfc
