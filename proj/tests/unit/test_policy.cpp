// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <doctest.h>

#include "common/error.hpp"
#include "helpers.hpp"
#include "policy/checkpoint.hpp"

using namespace mah;
using namespace mah::policy;

TEST_CASE("tokenizer round-trips and is prefix-stable") {
  Tokenizer tok;
  CHECK(tok.vocab_size() == 32);
  const std::string s = "3+4-2:\n3+4=7*\nANS 5\n";
  CHECK(tok.detokenize(tok.tokenize(s)) == s);
  const auto full = tok.tokenize(s);
  for (std::size_t cut = 0; cut <= s.size(); ++cut) {
    const auto pre = tok.tokenize(s.substr(0, cut));
    CHECK(std::equal(pre.begin(), pre.end(), full.begin()));
  }
  const auto enc = tok.encode_prompt("1+1:");
  CHECK(enc.front() == Tokenizer::kBos);
  CHECK(tok.detokenize({Tokenizer::kBos, tok.id_of('7'), Tokenizer::kEos}) == "7");
  CHECK_THROWS_AS(tok.tokenize("x"), Error);
}

TEST_CASE("incremental forward equals the full-sequence forward") {
  const auto model = test::tiny_policy(3);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> id(0, 31);
  for (std::size_t len : {1u, 7u, 33u}) {
    std::vector<int> seq(len);
    for (auto& t : seq) t = id(rng);
    const auto full = model.backbone().forward(seq);
    auto cache = model.backbone().empty_cache();
    const std::size_t d = 16;
    for (std::size_t p = 0; p < len; ++p) {
      const auto h = model.backbone().step(cache, seq[p]);
      for (std::size_t j = 0; j < d; ++j)
        CHECK(std::abs(h[j] - full.values()[p * d + j]) <= 1e-12);
    }
    CHECK(cache.position_count == len);
  }
}

TEST_CASE("sequence log-prob graph and incremental path agree") {
  const auto model = test::tiny_policy(5, 2);
  const std::vector<int> prompt = {0, 5, 12, 6, 15};
  const std::vector<int> resp = {5, 12, 6, 14, 11, 1};
  for (const auto& src : {HeadSource::of_head(1), HeadSource::reference(),
                          HeadSource::ensemble({0.25, 0.75})}) {
    const double g = sequence_logprob_graph(model, src, prompt, resp).item();
    const double i = sequence_logprob(model, src, prompt, resp);
    CHECK(g == doctest::Approx(i).epsilon(1e-12));
    CHECK(g < 0.0);
  }
}

TEST_CASE("ensemble distribution lies on the simplex and degenerates to one head") {
  const auto model = test::tiny_policy(6, 2);
  const auto enc = encode_prompt(model, std::vector<int>{0, 3, 4});
  const auto mix = ensemble_distribution(model, enc.hidden, std::vector<double>{0.4, 0.6});
  CHECK(std::accumulate(mix.begin(), mix.end(), 0.0) == doctest::Approx(1.0));
  const auto only0 = ensemble_distribution(model, enc.hidden, std::vector<double>{1.0, 0.0});
  const auto head0 = next_token_distribution(model, enc.hidden, HeadSource::of_head(0));
  for (std::size_t j = 0; j < head0.size(); ++j)
    CHECK(only0[j] == doctest::Approx(head0[j]).epsilon(1e-14));
  CHECK_THROWS_AS(check_simplex(std::vector<double>{0.5, 0.4}, 2), Error);
  CHECK_THROWS_AS(check_simplex(std::vector<double>{1.5, -0.5}, 2), Error);
  CHECK_THROWS_AS(check_simplex(std::vector<double>{1.0}, 2), Error);
}

TEST_CASE("init_heads copies the LM head and keeps the reference unperturbed") {
  const auto lm = test::tiny_policy(7);
  const auto same = init_heads(lm, 3, 0.0, 1);
  CHECK(same.num_heads() == 3);
  for (int i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < lm.head(0).size(); ++j)
      CHECK(same.head(i).values()[j] == lm.head(0).values()[j]);
  const auto noisy = init_heads(lm, 2, 0.01, 1);
  CHECK(noisy.head(0).values()[0] != noisy.head(1).values()[0]);
  for (std::size_t j = 0; j < lm.head(0).size(); ++j)
    CHECK(noisy.reference_head().values()[j] == lm.head(0).values()[j]);
  // Trainable parameters never include the reference head.
  for (const auto& t : noisy.trainable_parameters())
    CHECK(t.id() != noisy.reference_head().id());
}

TEST_CASE("clone is deep") {
  auto a = test::tiny_policy(8);
  auto b = a.clone();
  auto params = b.trainable_parameters();
  params.back().mutable_values()[0] += 1.0;
  CHECK(a.head(0).values()[0] != b.head(0).values()[0]);
}

TEST_CASE("policy checkpoints round-trip and detect corruption") {
  test::TempDir dir("ckpt");
  const auto model = test::tiny_policy(9, 2);
  const auto path = dir.path() / "p.ckpt";
  save_policy(path, model);
  const auto back = load_policy(path);
  CHECK(back.dims() == model.dims());
  CHECK(back.num_heads() == 2);
  const auto a = model.trainable_parameters(), b = back.trainable_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) CHECK(a[k].values()[i] == b[k].values()[i]);

  // Flip one payload byte.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(200);
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x5a);
    f.seekp(200);
    f.write(&c, 1);
  }
  try {
    load_policy(path);
    FAIL("expected a checksum error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::checksum);
  }
  CHECK_THROWS_AS(load_policy(dir.path() / "missing.ckpt"), Error);
}
