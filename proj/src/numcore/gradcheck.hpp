// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "numcore/tensor.hpp"

namespace mah::numcore {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  // Location and values of the worst coordinate.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // Set when a loss or gradient value was not finite.
  std::optional<std::string> nonfinite;
  bool passed = false;
};

/// Compares analytic gradients from `backward` against central finite
/// differences for every coordinate of `params`.
///
/// Per-coordinate relative error is |a - n| / max(|a|, |n|, floor). The floor
/// keeps coordinates whose true gradient sits at the finite-difference noise
/// level (~1e-10 for step 1e-6) from dominating; a constant function scores 0.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<Tensor> params, double step,
                           double tolerance, double floor = 1e-4);

}  // namespace mah::numcore
