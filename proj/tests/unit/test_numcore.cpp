// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <doctest.h>

#include "common/error.hpp"
#include "helpers.hpp"
#include "numcore/adam.hpp"
#include "numcore/gradcheck.hpp"
#include "numcore/ops.hpp"

using namespace mah;
using namespace mah::numcore;
using mah::test::random_tensor;

namespace {

void expect_gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  const auto r = grad_check(f, params, 1e-6, 1e-6);
  INFO("max rel error " << r.max_rel_error);
  CHECK_FALSE(r.nonfinite.has_value());
  CHECK(r.passed);
  CHECK(r.coordinates > 0);
}

}  // namespace

TEST_CASE("elementwise and reduction ops match finite differences") {
  auto a = random_tensor({3, 4}, 1);
  auto b = random_tensor({3, 4}, 2);
  auto bias = random_tensor({4}, 3);
  expect_gradcheck([&] { return sum(mul(add(a, b), sub(a, b))); }, {a, b});
  expect_gradcheck([&] { return mean(add(a, bias)); }, {a, bias});
  expect_gradcheck([&] { return sum(scale(add_scalar(tanh(a), 0.5), -1.7)); }, {a});
  expect_gradcheck([&] { return sum(mul(sigmoid(a), log_sigmoid(b))); }, {a, b});
  expect_gradcheck([&] { return sum(mul(gelu(a), b)); }, {a, b});
  expect_gradcheck([&] { return mse(a, b); }, {a, b});
}

TEST_CASE("matrix ops match finite differences") {
  auto a = random_tensor({3, 5}, 4);
  auto w = random_tensor({5, 2}, 5);
  auto c = random_tensor({3, 2}, 6, false);
  expect_gradcheck([&] { return sum(mul(matmul(a, w), c)); }, {a, w});
  expect_gradcheck([&] { return sum(mul(softmax(matmul(a, w)), c)); }, {a, w});
  expect_gradcheck([&] { return sum(mul(log_softmax(matmul(a, w)), c)); }, {a, w});
  std::vector<std::size_t> rows = {0, 2, 2}, cols = {1, 0, 4};
  expect_gradcheck([&] { return sum(gather(a, rows, cols)); }, {a});
  expect_gradcheck([&] { return sum(mul(slice_rows(a, 1, 3), slice_rows(a, 0, 2))); }, {a});
}

TEST_CASE("embedding, layer norm and attention match finite differences") {
  auto table = random_tensor({6, 4}, 7);
  std::vector<int> ids = {1, 5, 1, 0};
  auto g = random_tensor({4}, 8);
  auto bias = random_tensor({4}, 9);
  auto probe = random_tensor({4, 4}, 10, false);
  expect_gradcheck([&] { return sum(mul(embedding(table, ids), probe)); }, {table});
  expect_gradcheck([&] { return sum(mul(layer_norm(table, g, bias), random_tensor({6, 4}, 11, false))); },
                   {table, g, bias});
  auto qkv = random_tensor({5, 12}, 12);
  auto probe2 = random_tensor({5, 4}, 13, false);
  expect_gradcheck([&] { return sum(mul(causal_attention(qkv, 2), probe2)); }, {qkv});
}

TEST_CASE("log_mixture matches finite differences and skips zero weights") {
  auto x = random_tensor({2, 5}, 14);
  auto y = random_tensor({2, 5}, 15);
  std::vector<Tensor> lp = {log_softmax(x), log_softmax(y)};
  std::vector<double> w = {0.3, 0.7};
  expect_gradcheck(
      [&] {
        std::vector<Tensor> l = {log_softmax(x), log_softmax(y)};
        return sum(log_mixture(l, w));
      },
      {x, y});
  std::vector<double> one_hot = {1.0, 0.0};
  const auto m = log_mixture(lp, one_hot);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m.values()[i] == lp[0].values()[i]);
}

TEST_CASE("causal attention ignores future positions") {
  auto qkv = random_tensor({4, 12}, 16, false);
  auto out = causal_attention(qkv, 2);
  auto v = qkv.values();
  std::vector<double> changed(v.begin(), v.end());
  for (std::size_t c = 0; c < 12; ++c) changed[3 * 12 + c] += 1.0;
  auto out2 = causal_attention(Tensor::from({4, 12}, changed), 2);
  for (std::size_t i = 0; i < 3 * 4; ++i) CHECK(out.values()[i] == out2.values()[i]);
}

TEST_CASE("shape mismatches throw with both shapes in the message") {
  auto a = random_tensor({2, 3}, 17);
  auto b = random_tensor({3, 2}, 18);
  try {
    add(a, b);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::shape_mismatch);
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("backward accumulates through shared subgraphs") {
  auto x = Tensor::from({1}, {3.0}, true);
  auto y = mul(x, x);            // x^2
  auto z = add(y, mul(y, x));    // x^2 + x^3
  backward(sum(z));
  CHECK(x.grad()[0] == doctest::Approx(2 * 3.0 + 3 * 9.0));
}

TEST_CASE("leaves off the loss path keep an exact zero gradient") {
  auto a = random_tensor({2}, 19);
  auto unused = random_tensor({2}, 20);
  std::vector<Tensor> ps = {a, unused};
  zero_grads(ps);
  backward(sum(a));
  for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("gradcheck flags a wrong gradient") {
  auto a = random_tensor({3}, 21);
  // Custom op with a deliberately wrong backward.
  auto wrong = [&] {
    std::vector<double> v(a.values().begin(), a.values().end());
    for (auto& x : v) x = x * x;
    return sum(make_result({3}, v, {a}, [](Node& self) {
      auto* p = self.parents[0].get();
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];  // should be 2x
    }));
  };
  std::vector<Tensor> ps = {a};
  CHECK_FALSE(grad_check(wrong, ps, 1e-6, 1e-4).passed);
}

TEST_CASE("adam minimizes a quadratic and respects clipping") {
  auto w = Tensor::from({2}, {3.0, -2.0}, true);
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt({w}, cfg);
  for (int i = 0; i < 300; ++i) {
    opt.zero_grad();
    backward(sum(mul(w, w)));
    opt.step();
  }
  CHECK(std::abs(w.values()[0]) < 1e-2);
  CHECK(std::abs(w.values()[1]) < 1e-2);
  CHECK(opt.steps_taken() == 300);

  auto v = Tensor::from({1}, {10.0}, true);
  AdamConfig clipped;
  clipped.lr = 0.5;
  clipped.clip_norm = 1.0;
  Adam opt2({v}, clipped);
  opt2.zero_grad();
  backward(scale(sum(v), 1000.0));
  CHECK(opt2.step() == doctest::Approx(1000.0));
  // Adam's first step moves by lr regardless of gradient scale.
  CHECK(v.values()[0] == doctest::Approx(9.5).epsilon(1e-6));
}

TEST_CASE("adam rejects non-finite gradients") {
  auto w = Tensor::from({1}, {1.0}, true);
  Adam opt({w}, AdamConfig{});
  opt.zero_grad();
  backward(scale(sum(w), std::nan("")));
  CHECK_THROWS_AS(opt.step(), Error);
}
