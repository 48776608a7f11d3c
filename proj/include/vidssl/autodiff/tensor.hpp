// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vidssl/error.hpp"

namespace vidssl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  // Leaves: persistent accumulator. Interior nodes: scratch per backward().
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return parents.empty(); }

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Shape-carrying differentiable array. Cheap to copy (shared node).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values) {
    if (values.size() != vidssl::numel(shape))
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values for shape " + to_string(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) {
    const auto count = vidssl::numel(shape);
    return constant(std::move(shape), std::vector<T>(count, T(0)));
  }

  static Tensor scalar(T v) { return constant({1}, {v}); }

  /// Leaf that accumulates gradients across backward() calls.
  static Tensor variable(Shape shape, std::vector<T> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->grad.assign(t.node_->value.size(), T(0));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar " + to_string(shape()));
    return node_->value[0];
  }

  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> ts) {
  for (auto* t : ts)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

/// Builds an op result. The backward closure is dropped when no input needs
/// gradients, so constant subgraphs never retain their inputs.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->op = op;
  for (const auto& in : inputs)
    if (in.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node_ptr());
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

template <class T>
std::vector<T>* grad_sink(Node<T>& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Each reachable node is visited once
/// in reverse topological order; leaf gradients accumulate.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " +
                     (loss.defined() ? to_string(loss.shape()) : "undefined"));
  if (!loss.requires_grad())
    throw ShapeError("backward: loss does not require grad");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
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

  for (Node<T>* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  loss.node()->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
  }
  for (Node<T>* n : order)
    if (!n->is_leaf()) std::vector<T>().swap(n->grad);
}

/// Same values, no provenance: contributes nothing upstream.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return Tensor<T>::constant(x.shape(),
                             std::vector<T>(x.values().begin(), x.values().end()));
}

}  // namespace vidssl
