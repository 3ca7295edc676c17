// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "numcore/ops.hpp"

#include <cmath>
#include <memory>

#include "numcore/kernels.hpp"

namespace mah::numcore {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  fail(ErrorCode::shape_mismatch, std::string(op) + ": incompatible shapes " +
                                      shape_str(a.shape()) + " and " +
                                      shape_str(b.shape()));
}

void check_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
}

// Parent gradient buffer, or null when that parent needs no gradient.
double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

const double* parent_value(Node& self, std::size_t i) {
  return self.parents[i]->value.data();
}

template <class F, class G>
Tensor unary(const Tensor& a, F f, G dfdx) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [dfdx](Node& self) {
    double* ga = parent_grad(self, 0);
    if (!ga) return;
    const double* x = parent_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      ga[i] += self.grad[i] * dfdx(x[i], self.value[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    kernels::vec_mat(av.data() + i * k, bv.data(), k, n, out.data() + i * n);
  Shape shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
  return make_result(std::move(shape), std::move(out), {a, b},
                     [m, k, n](Node& self) {
                       const double* g = self.grad.data();
                       const double* av = parent_value(self, 0);
                       const double* bv = parent_value(self, 1);
                       if (double* ga = parent_grad(self, 0)) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             const double* brow = bv + p * n;
                             const double* grow = g + i * n;
                             for (std::size_t j = 0; j < n; ++j)
                               s += grow[j] * brow[j];
                             ga[i * k + p] += s;
                           }
                       }
                       if (double* gb = parent_grad(self, 1)) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double x = av[i * k + p];
                             double* gbrow = gb + p * n;
                             const double* grow = g + i * n;
                             for (std::size_t j = 0; j < n; ++j)
                               gbrow[j] += x * grow[j];
                           }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && b.rows() == 1 && b.cols() == a.cols() &&
                    b.size() == a.cols();
  if (!same && !bias) shape_error("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  const std::size_t n = a.cols();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + bv[i];
  } else {
    for (std::size_t r = 0; r < a.rows(); ++r)
      kernels::add_in_place(out.data() + r * n, bv.data(), n);
  }
  return make_result(a.shape(), std::move(out), {a, b},
                     [same, n](Node& self) {
                       const auto& g = self.grad;
                       if (double* ga = parent_grad(self, 0))
                         for (std::size_t i = 0; i < g.size(); ++i)
                           ga[i] += g[i];
                       if (double* gb = parent_grad(self, 1)) {
                         if (same) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gb[i] += g[i];
                         } else {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gb[i % n] += g[i];
                         }
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same("sub", a, b);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& g = self.grad;
    if (double* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = parent_grad(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same("mul", a, b);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& g = self.grad;
    const double* av = parent_value(self, 0);
    const double* bv = parent_value(self, 1);
    if (double* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (double* gb = parent_grad(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result({1}, {s}, {a}, [](Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const double g = self.grad[0];
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor softmax(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    kernels::softmax_row(av.data() + i * n, n, out.data() + i * n);
  return make_result(a.shape(), std::move(out), {a}, [m, n](Node& self) {
    double* ga = parent_grad(self, 0);
    if (!ga) return;
    const double* s = self.value.data();
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += s[i * n + j] * g[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        ga[i * n + j] += s[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  std::vector<double> probs(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double lse =
        kernels::softmax_row(av.data() + i * n, n, probs.data() + i * n);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] - lse;
  }
  return make_result(a.shape(), std::move(out), {a},
                     [m, n, probs = std::move(probs)](Node& self) {
                       double* ga = parent_grad(self, 0);
                       if (!ga) return;
                       const double* g = self.grad.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         double total = 0.0;
                         for (std::size_t j = 0; j < n; ++j)
                           total += g[i * n + j];
                         for (std::size_t j = 0; j < n; ++j)
                           ga[i * n + j] +=
                               g[i * n + j] - probs[i * n + j] * total;
                       }
                     });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return kernels::sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return kernels::log_sigmoid(x); },
      [](double x, double) { return kernels::sigmoid(-x); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, [](double x) { return kernels::gelu(x); },
      [](double x, double) { return kernels::gelu_grad(x); });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  check_same("mse", pred, target);
  return mean(mul(sub(pred, target), sub(pred, target)));
}

Tensor gather(const Tensor& a, std::span<const std::size_t> rows,
              std::span<const std::size_t> cols) {
  if (rows.size() != cols.size())
    fail(ErrorCode::shape_mismatch, "gather: index lists differ in length (" +
                                        std::to_string(rows.size()) + " vs " +
                                        std::to_string(cols.size()) + ")");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> out(rows.size());
  auto av = a.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m || cols[i] >= n)
      fail(ErrorCode::shape_mismatch,
           "gather: index (" + std::to_string(rows[i]) + "," +
               std::to_string(cols[i]) + ") outside " + shape_str(a.shape()));
    flat[i] = rows[i] * n + cols[i];
    out[i] = av[flat[i]];
  }
  const std::size_t count = out.size();
  return make_result({count}, std::move(out), {a},
                     [flat = std::move(flat)](Node& self) {
                       double* ga = parent_grad(self, 0);
                       if (!ga) return;
                       for (std::size_t i = 0; i < flat.size(); ++i)
                         ga[flat[i]] += self.grad[i];
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const std::size_t n = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  auto tv = table.values();
  std::vector<std::size_t> idx(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= n)
      fail(ErrorCode::invalid_argument,
           "embedding: id " + std::to_string(ids[t]) + " outside table of " +
               std::to_string(n) + " rows");
    idx[t] = static_cast<std::size_t>(ids[t]);
    for (std::size_t j = 0; j < d; ++j) out[t * d + j] = tv[idx[t] * d + j];
  }
  return make_result({ids.size(), d}, std::move(out), {table},
                     [d, idx = std::move(idx)](Node& self) {
                       double* ga = parent_grad(self, 0);
                       if (!ga) return;
                       for (std::size_t t = 0; t < idx.size(); ++t)
                         for (std::size_t j = 0; j < d; ++j)
                           ga[idx[t] * d + j] += self.grad[t * d + j];
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin > end || end > m)
    fail(ErrorCode::shape_mismatch, "slice_rows: range [" +
                                        std::to_string(begin) + "," +
                                        std::to_string(end) + ") outside " +
                                        shape_str(a.shape()));
  auto av = a.values();
  std::vector<double> out(av.begin() + begin * n, av.begin() + end * n);
  return make_result({end - begin, n}, std::move(out), {a},
                     [begin, n](Node& self) {
                       double* ga = parent_grad(self, 0);
                       if (!ga) return;
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         ga[begin * n + i] += self.grad[i];
                     });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
  const std::size_t m = a.rows(), n = a.cols();
  if (gain.size() != n) shape_error("layer_norm gain", a, gain);
  if (bias.size() != n) shape_error("layer_norm bias", a, bias);
  std::vector<double> out(a.size());
  std::vector<double> x_hat(a.size());
  std::vector<double> inv(m);
  auto av = a.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    inv[i] = kernels::normalize_row(av.data() + i * n, n, x_hat.data() + i * n);
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = x_hat[i * n + j] * gv[j] + bv[j];
  }
  return make_result(
      a.shape(), std::move(out), {a, gain, bias},
      [m, n, x_hat = std::move(x_hat), inv = std::move(inv)](Node& self) {
        const double* g = self.grad.data();
        const double* gv = parent_value(self, 1);
        double* ga = parent_grad(self, 0);
        double* gg = parent_grad(self, 1);
        double* gb = parent_grad(self, 2);
        std::vector<double> dxh(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* xh = x_hat.data() + i * n;
          const double* gi = g + i * n;
          if (gg)
            for (std::size_t j = 0; j < n; ++j) gg[j] += gi[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < n; ++j) gb[j] += gi[j];
          if (!ga) continue;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxh[j] = gi[j] * gv[j];
            mean_d += dxh[j];
            mean_dx += dxh[j] * xh[j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j)
            ga[i * n + j] += inv[i] * (dxh[j] - mean_d - xh[j] * mean_dx);
        }
      });
}

Tensor causal_attention(const Tensor& qkv, std::size_t num_heads) {
  const std::size_t T = qkv.rows(), width = qkv.cols();
  if (qkv.rank() != 2 || width % 3 != 0 || num_heads == 0 ||
      (width / 3) % num_heads != 0)
    fail(ErrorCode::shape_mismatch, "causal_attention: qkv shape " +
                                        shape_str(qkv.shape()) +
                                        " incompatible with " +
                                        std::to_string(num_heads) + " heads");
  const std::size_t d = width / 3, hd = d / num_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  auto x = qkv.values();
  std::vector<double> out(T * d);
  // probs[h][i][j], j <= i
  auto probs = std::make_shared<std::vector<double>>(num_heads * T * T, 0.0);
  for (std::size_t h = 0; h < num_heads; ++h)
    for (std::size_t i = 0; i < T; ++i)
      kernels::attend(x.data() + i * width + h * hd,
                      x.data() + d + h * hd, x.data() + 2 * d + h * hd, width,
                      i + 1, hd, sc, probs->data() + (h * T + i) * T,
                      out.data() + i * d + h * hd);
  return make_result(
      {T, d}, std::move(out), {qkv},
      [T, d, hd, width, sc, num_heads, probs](Node& self) {
        double* gx = parent_grad(self, 0);
        if (!gx) return;
        const double* x = parent_value(self, 0);
        const double* g = self.grad.data();
        std::vector<double> dp(T);
        for (std::size_t h = 0; h < num_heads; ++h) {
          const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
          for (std::size_t i = 0; i < T; ++i) {
            const double* p = probs->data() + (h * T + i) * T;
            const double* gi = g + i * d + h * hd;
            double pdp = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
              const double* v = x + j * width + vo;
              double s = 0.0;
              for (std::size_t c = 0; c < hd; ++c) {
                s += gi[c] * v[c];
                gx[j * width + vo + c] += p[j] * gi[c];
              }
              dp[j] = s;
              pdp += p[j] * s;
            }
            const double* q = x + i * width + qo;
            for (std::size_t j = 0; j <= i; ++j) {
              const double ds = p[j] * (dp[j] - pdp) * sc;
              const double* k = x + j * width + ko;
              for (std::size_t c = 0; c < hd; ++c) {
                gx[i * width + qo + c] += ds * k[c];
                gx[j * width + ko + c] += ds * q[c];
              }
            }
          }
        }
      });
}

Tensor log_mixture(std::span<const Tensor> logps, std::span<const double> w) {
  require(!logps.empty() && logps.size() == w.size(),
          "log_mixture: need one weight per component",
          ErrorCode::shape_mismatch);
  const std::size_t n = logps[0].size();
  for (const auto& l : logps) check_same("log_mixture", logps[0], l);
  std::vector<double> out(n);
  std::vector<double> resp(logps.size() * n, 0.0);  // posterior weights
  for (std::size_t t = 0; t < n; ++t) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < logps.size(); ++i)
      if (w[i] > 0.0) mx = std::max(mx, std::log(w[i]) + logps[i].values()[t]);
    double s = 0.0;
    for (std::size_t i = 0; i < logps.size(); ++i)
      if (w[i] > 0.0) {
        resp[i * n + t] = std::exp(std::log(w[i]) + logps[i].values()[t] - mx);
        s += resp[i * n + t];
      }
    out[t] = mx + std::log(s);
    for (std::size_t i = 0; i < logps.size(); ++i) resp[i * n + t] /= s;
  }
  std::vector<Tensor> parents(logps.begin(), logps.end());
  return make_result({n}, std::move(out), std::move(parents),
                     [n, resp = std::move(resp)](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         double* gi = parent_grad(self, i);
                         if (!gi) continue;
                         for (std::size_t t = 0; t < n; ++t)
                           gi[t] += self.grad[t] * resp[i * n + t];
                       }
                     });
}

}  // namespace mah::numcore
