// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "numcore/tensor.hpp"

namespace mah::numcore {

// All ops throw Error(shape_mismatch) naming both shapes on a mismatch.
// Matrix ops treat rank-1 tensors as a single row.

Tensor matmul(const Tensor& a, const Tensor& b);
// Same shape, or `b` a bias row broadcast over the rows of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softmax(const Tensor& a);      // row-wise
Tensor log_softmax(const Tensor& a);  // row-wise
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation

Tensor mse(const Tensor& pred, const Tensor& target);

// out[i] = a[rows[i], cols[i]]
Tensor gather(const Tensor& a, std::span<const std::size_t> rows,
              std::span<const std::size_t> cols);
// Row lookup into a [n x d] table.
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);

// Fused causal multi-head scaled dot-product attention. `qkv` is [T x 3d]
// laid out as [Q | K | V]; result is [T x d].
Tensor causal_attention(const Tensor& qkv, std::size_t num_heads);

// out[t] = log(sum_i w_i exp(logps[i][t])), skipping zero weights.
Tensor log_mixture(std::span<const Tensor> logps, std::span<const double> w);

}  // namespace mah::numcore
