// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Row-level kernels shared by the graph ops and the cache-carrying inference
// path. Both paths call exactly these loops so their results agree bit-for-bit.

#pragma once

#include <cmath>
#include <cstddef>

namespace mah::numcore::kernels {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

inline double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) +
         0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// out[0..n) = x[0..k) * W[k x n], accumulated over k in ascending order.
inline void vec_mat(const double* x, const double* w, std::size_t k,
                    std::size_t n, double* out) {
  for (std::size_t j = 0; j < n; ++j) out[j] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double a = x[p];
    const double* wrow = w + p * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += a * wrow[j];
  }
}

inline void add_in_place(double* out, const double* b, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) out[j] = out[j] + b[j];
}

inline constexpr double kLayerNormEps = 1e-5;

// Writes the normalized row x_hat and returns 1/sqrt(var + eps).
inline double normalize_row(const double* x, std::size_t n, double* x_hat) {
  double mean = 0.0;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t j = 0; j < n; ++j) x_hat[j] = (x[j] - mean) * inv;
  return inv;
}

inline void layer_norm_row(const double* x, const double* gain,
                           const double* bias, std::size_t n, double* x_hat,
                           double* out) {
  normalize_row(x, n, x_hat);
  for (std::size_t j = 0; j < n; ++j) out[j] = x_hat[j] * gain[j] + bias[j];
}

// Single-query attention for one head over `count` cached positions.
// Key/value rows for position j start at keys + j*stride (and values).
// `probs` receives the softmax weights (length count).
inline void attend(const double* q, const double* keys, const double* values,
                   std::size_t stride, std::size_t count,
                   std::size_t head_dim, double scale, double* probs,
                   double* out) {
  double mx = -INFINITY;
  for (std::size_t j = 0; j < count; ++j) {
    const double* k = keys + j * stride;
    double s = 0.0;
    for (std::size_t d = 0; d < head_dim; ++d) s += q[d] * k[d];
    s *= scale;
    probs[j] = s;
    if (s > mx) mx = s;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    probs[j] = std::exp(probs[j] - mx);
    sum += probs[j];
  }
  for (std::size_t j = 0; j < count; ++j) probs[j] /= sum;
  for (std::size_t d = 0; d < head_dim; ++d) out[d] = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    const double p = probs[j];
    const double* v = values + j * stride;
    for (std::size_t d = 0; d < head_dim; ++d) out[d] += p * v[d];
  }
}

// Numerically stable softmax of a row; returns log-sum-exp.
inline double softmax_row(const double* z, std::size_t n, double* out) {
  double mx = -INFINITY;
  for (std::size_t j = 0; j < n; ++j)
    if (z[j] > mx) mx = z[j];
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(z[j] - mx);
    sum += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
  return mx + std::log(sum);
}

inline double log_sigmoid(double x) {
  return x < 0.0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace mah::numcore::kernels
