// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "numcore/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace mah::numcore {

namespace {

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value,
                               bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->id = next_id();
  return node;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  require(!shape.empty(), "tensor shape must have at least one dimension",
          ErrorCode::shape_mismatch);
  if (values.size() != shape_numel(shape)) {
    fail(ErrorCode::shape_mismatch,
         "tensor shape " + shape_str(shape) + " needs " +
             std::to_string(shape_numel(shape)) + " values, got " +
             std::to_string(values.size()));
  }
  auto node = new_node(std::move(shape), std::move(values), requires_grad);
  if (requires_grad) node->grad.assign(node->value.size(), 0.0);
  return wrap(std::move(node));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

std::size_t Tensor::rows() const {
  return rank() >= 2 ? shape_numel(shape()) / shape().back() : 1;
}

std::size_t Tensor::cols() const { return shape().back(); }

double Tensor::item() const {
  if (size() != 1) {
    fail(ErrorCode::shape_mismatch,
         "item() needs a single-element tensor, got " + shape_str(shape()));
  }
  return node_->value[0];
}

std::span<const double> Tensor::grad() const {
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return from(node_->shape, node_->value, node_->requires_grad);
}

Tensor Tensor::detach() const { return from(node_->shape, node_->value); }

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  auto node = new_node(std::move(shape), std::move(value), needs);
  if (needs) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(node));
}

void backward(const Tensor& loss) {
  require(loss.defined(), "backward on an undefined tensor");
  if (loss.size() != 1) {
    fail(ErrorCode::shape_mismatch,
         "backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reverse gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Release intermediate buffers so a retained graph does not double count.
  for (Node* node : order) {
    if (node->backward) node->grad.clear();
  }
}

std::vector<std::vector<double>> gradient_map(std::span<const Tensor> params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto g = p.grad();
    out.emplace_back(g.begin(), g.end());
  }
  return out;
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace mah::numcore
