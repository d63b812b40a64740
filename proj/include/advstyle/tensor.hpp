#pragma once

// Reverse-mode autodiff core: a Tensor is a handle to a graph node holding
// values, an optional gradient buffer, and a backward closure. The graph is
// dynamic (rebuilt every forward) and torn down by shared_ptr release.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "advstyle/common.hpp"

namespace advstyle {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, only while requires_grad
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Reads this->grad, accumulates into parents' grads.
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    Tensor t;
    t.n_ = std::make_shared<Node<T>>();
    t.n_->shape = std::move(shape);
    t.n_->data = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> d(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->data.size(); }
  std::size_t ndim() const { return n_->shape.size(); }

  std::vector<T>& data() { return n_->data; }
  const std::vector<T>& data() const { return n_->data; }

  bool requires_grad() const { return n_->requires_grad; }

  std::vector<T>& grad() {
    if (!n_->requires_grad) throw ValueError("grad requested on a tensor without requires_grad");
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<T>& grad() const {
    if (!n_->requires_grad) throw ValueError("grad requested on a tensor without requires_grad");
    n_->ensure_grad();
    return n_->grad;
  }

  void zero_grad() {
    if (n_->requires_grad) n_->grad.assign(n_->data.size(), T(0));
  }

  T item() const {
    if (size() != 1) throw ValueError("item: tensor has " + std::to_string(size()) + " elements");
    return n_->data[0];
  }

  // Value copy detached from the graph.
  Tensor detach() const { return from_data(n_->shape, n_->data, false); }

  std::shared_ptr<Node<T>> node() const { return n_; }

  // Reverse sweep from a scalar root. Leaf gradients accumulate across
  // backward calls (until zero_grad); interior nodes get a fresh gradient
  // buffer each sweep, so repeating backward on the same graph adds exactly
  // one more unit of the same gradient.
  void backward() const {
    if (size() != 1) throw ValueError("backward: loss must be scalar, got shape " + shape_str(shape()));
    if (!n_->requires_grad) return;

    // Iterative post-order topological sort over parents.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    for (Node<T>* node : order)
      if (node->backward_fn) std::fill(node->grad.begin(), node->grad.end(), T(0));

    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn();
    }
  }

  // Graph-construction helper used by the op implementations.
  static Tensor make_op(Shape shape, std::vector<T> data, const char* op,
                        std::vector<std::shared_ptr<Node<T>>> parents,
                        std::function<void(Node<T>&)> backward) {
    Tensor t = from_data(std::move(shape), std::move(data), false);
    t.n_->op = op;
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    if (rg) {
      t.n_->requires_grad = true;
      t.n_->parents = std::move(parents);
      auto* raw = t.n_.get();
      t.n_->backward_fn = [raw, fn = std::move(backward)]() { fn(*raw); };
    }
    return t;
  }

private:
  std::shared_ptr<Node<T>> n_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace advstyle
