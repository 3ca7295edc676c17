// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mah::numcore {

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<Tensor> params, double step,
                           double tolerance, double floor) {
  require(step >= 1e-7 && step <= 1e-4,
          "grad_check: step must lie in [1e-7, 1e-4], got " +
              std::to_string(step));
  GradCheckReport report;

  zero_grads(params);
  Tensor loss = f();
  if (!std::isfinite(loss.item())) {
    report.nonfinite = "loss is not finite at the base point";
    return report;
  }
  backward(loss);
  const auto analytic = gradient_map(params);
  zero_grads(params);

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f().item();
      values[i] = saved - step;
      const double down = f().item();
      values[i] = saved;
      const double a = analytic[p][i];
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(a)) {
        report.nonfinite = "non-finite value at param " + std::to_string(p) +
                           " coordinate " + std::to_string(i);
        report.passed = false;
        return report;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = abs_err / denom;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.coordinates == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_param = p;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
      ++report.coordinates;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace mah::numcore
