#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg::nn {

// Eager reverse-mode graph. Each op allocates a Node whose backprop closure
// scatters this node's grad into its parents' grads. Parameters are
// long-lived nodes; activation nodes are rebuilt every forward pass and die
// with the loss root.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    // a rank-0 value has the same (empty) shape as a default tensor, so check
    // the payload size as well
    if (grad.shape != value.shape || grad.data.size() != value.data.size()) {
      grad = Tensor<T>(value.shape);
    }
  }
  void zero_grad() {
    grad = Tensor<T>(value.shape);
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <typename T>
NodePtr<T> parameter(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->ensure_grad();
  return n;
}

template <typename T>
NodePtr<T> make_op(Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

// Accumulates d(root)/d(param) into every reachable parameter's grad. The
// root must be scalar (or grads are seeded with all-ones).
template <typename T>
void backward(const NodePtr<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      ++stack.back().second;  // before emplace_back, which may reallocate
      Node<T>* p = node->parents[idx].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) n->ensure_grad();
  root->grad.fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace voxseg::nn
