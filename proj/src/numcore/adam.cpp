// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "numcore/adam.hpp"

#include <cmath>

namespace mah::numcore {

double global_grad_norm(std::span<const Tensor> params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    require(p.requires_grad(), "Adam: parameter does not require grad");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() { zero_grads(params_); }

double Adam::step() {
  const double norm = global_grad_norm(params_);
  if (!std::isfinite(norm))
    fail(ErrorCode::numeric, "Adam: non-finite gradient norm");
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm)
                          ? cfg_.clip_norm / norm
                          : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].mutable_values();
    auto g = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) +
                         cfg_.weight_decay * w[i]);
    }
  }
  return norm;
}

}  // namespace mah::numcore
