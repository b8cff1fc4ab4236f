#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pean/tensor.hpp"

namespace pean {

// Tape-based reverse-mode autodiff. Each op produces a Node holding the
// value, the parent links and a closure that pushes this node's grad into
// the parents' grads. backward() walks the graph in reverse topological
// order and frees interior buffers as soon as they are consumed.

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;

  Tensor<T>& ensure_grad() {
    if (!grad.defined()) grad = Tensor<T>::zeros(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad && grad_mode();
    node_->is_leaf = true;
  }
  static Var constant(Tensor<T> value) { return Var(std::move(value), false); }
  static Var scalar(T v) { return Var(Tensor<T>::scalar(v), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& val() const { return node_->value; }
  Tensor<T>& val() { return node_->value; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return node_; }

  T item() const {
    check(node_->value.numel() == 1, "item() on non-scalar");
    return node_->value[0];
  }
  Tensor<T> detach() const { return node_->value; }

  void zero_grad() {
    if (node_->grad.defined()) node_->grad.fill(T(0));
  }

  // Used by make_op.
  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Central op constructor: wires parents and the backward closure only when
// a parent actually requires grad and grad mode is on, so frozen-model and
// inference paths build no graph at all.
template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool need = false;
  if (grad_mode())
    for (const auto& p : parents)
      if (p.requires_grad()) need = true;
  if (need) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Var<T>::from_node(std::move(n));
}

// Reverse-mode sweep from a scalar root. Interior node buffers are released
// once their backward ran; leaves keep their accumulated grads.
template <class T>
void backward(const Var<T>& root) {
  check(root.numel() == 1, "backward() root must be scalar");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // `order` is leaves-to-root; walk it root-to-leaves.
  root.node()->ensure_grad().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
    if (!n->is_leaf) {
      n->value.release();
      n->grad.release();
      n->backward = nullptr;
    }
  }
}

}  // namespace pean
