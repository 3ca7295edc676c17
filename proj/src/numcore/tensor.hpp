// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Define-by-run reverse-mode tensor engine. Every forward op allocates a new
// graph node that keeps its parents alive; dropping the loss tensor frees the
// graph. Leaf tensors created with `requires_grad` act as parameters and
// accumulate gradients across backward calls until `zero_grad`.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "common/error.hpp"

namespace mah::numcore {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's grad into its parents. Null for leaves.
  std::function<void(Node&)> backward;
  std::uint64_t id = 0;

  // Accumulation target sized on first use.
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  // Matrix view: rank-1 tensors are a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient of a leaf; all zeros when nothing reached it.
  std::span<const double> grad() const;
  void zero_grad();

  std::uint64_t id() const { return node_->id; }

  // Deep copy into a fresh leaf with the same requires_grad flag.
  Tensor clone() const;
  // Same values, no history, no grad.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Registers an op result. `requires_grad` is inherited from any parent.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

/// Runs reverse-mode accumulation from a scalar loss into every leaf that
/// requires grad. Leaves not on the loss path keep whatever grad they had
/// (exact zero after `zero_grad`).
void backward(const Tensor& loss);

/// Gradients of `params` copied out after `backward`.
std::vector<std::vector<double>> gradient_map(std::span<const Tensor> params);

void zero_grads(std::span<Tensor> params);

}  // namespace mah::numcore
