// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "numcore/tensor.hpp"

namespace mah::numcore {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double clip_norm = 0.0;     // global grad-norm clip; 0 disables
};

/// Adam with decoupled weight decay over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  // Applies one update from the params' current grads. Returns the
  // pre-clip global gradient norm.
  double step();
  void zero_grad();

  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

double global_grad_norm(std::span<const Tensor> params);

}  // namespace mah::numcore
