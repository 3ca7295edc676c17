// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <map>

#include <doctest.h>

#include "common/error.hpp"
#include "synthtasks/arithmetic.hpp"
#include "synthtasks/pairs.hpp"
#include "synthtasks/style.hpp"

using namespace mah;
using namespace mah::synth;

namespace {

ArithmeticProblem problem(std::vector<int> operands, std::vector<char> ops) {
  ArithmeticProblem p;
  p.operands = std::move(operands);
  p.ops = std::move(ops);
  return p;
}

}  // namespace

TEST_CASE("prompts render and parse back") {
  const auto p = problem({3, 4, 2}, {'+', '-'});
  CHECK(p.prompt() == "3+4-2:");
  CHECK(p.answer() == 5);
  CHECK(p.running(1) == 7);
  const auto back = parse_prompt(p.prompt());
  REQUIRE(back.has_value());
  CHECK(*back == p);
  CHECK_FALSE(parse_prompt("3:").has_value());
  CHECK_FALSE(parse_prompt("3+4").has_value());
  CHECK_FALSE(parse_prompt("12+4:").has_value());
  CHECK(ArithmeticProblem::from_json(p.to_json()) == p);
}

TEST_CASE("verify scores steps and chains errors") {
  const auto p = problem({3, 4, 2}, {'+', '-'});
  auto v = verify(p, "3+4=7\n7-2=5\nANS 5\n");
  CHECK(v.z == 1);
  CHECK(v.step_rewards == std::vector<int>{1, 1});
  CHECK_FALSE(v.truncated);

  v = verify(p, "3+4=8\n8-2=6\nANS 6\n");
  CHECK(v.z == 0);
  CHECK(v.step_rewards == std::vector<int>{0, 0});

  v = verify(p, "3+4=7\n7-2=5\n");
  CHECK(v.z == 0);
  CHECK(v.truncated);

  // A correct final answer earns z even after a bad line.
  v = verify(p, "3+4=8\nANS 5\n");
  CHECK(v.z == 1);
  CHECK(v.step_rewards == std::vector<int>{0});

  // Style markers do not change correctness.
  CHECK(verify(p, "3+4=7*\n7-2=5*\nANS 5\n").z == 1);
}

TEST_CASE("oracle step value reads the next line") {
  const auto p = problem({3, 4, 2}, {'+', '-'});
  CHECK(oracle_step_value(p, "", "3+4=7\n") == 1.0);
  CHECK(oracle_step_value(p, "", "3+4=6\n") == 0.0);
  CHECK(oracle_step_value(p, "3+4=7\n", "7-2=5*\n") == 1.0);
  CHECK(oracle_step_value(p, "3+4=7\n7-2=5\n", "ANS 5\n") == 1.0);
  CHECK(oracle_step_value(p, "3+4=7\n7-2=5\n", "ANS 4\n") == 0.0);
  CHECK(oracle_step_value(p, "3+4=7\n", "garbage\n") == 0.0);
}

TEST_CASE("rendered solutions verify; noisy ones at rate 0 are exact") {
  const auto problems = gen_problems(11, 200);
  std::mt19937_64 rng(3);
  for (const auto& p : problems) {
    CHECK(p.operands.size() >= 2);
    CHECK(p.operands.size() <= 6);
    CHECK(p.ops.size() + 1 == p.operands.size());
    CHECK(verify(p, render_solution(p, false)).z == 1);
    CHECK(verify(p, render_solution(p, true)).z == 1);
    CHECK(render_noisy_solution(p, true, 0.0, rng) == render_solution(p, true));
  }
  // Every line wrong: no reasoning line earns a step reward.
  for (const auto& p : problems)
    for (int r : verify(p, render_noisy_solution(p, false, 1.0, rng)).step_rewards) CHECK(r == 0);
}

TEST_CASE("problem generation is seeded") {
  CHECK(gen_problems(5, 20) == gen_problems(5, 20));
  CHECK_FALSE(gen_problems(5, 20) == gen_problems(6, 20));
  CHECK_THROWS_AS(gen_problems(5, 0), Error);
}

TEST_CASE("split_steps keeps separators and trailing partial lines") {
  CHECK(split_steps("a\nb\n") == std::vector<std::string>{"a\n", "b\n"});
  CHECK(split_steps("a\nb") == std::vector<std::string>{"a\n", "b"});
  CHECK(split_steps("").empty());
  CHECK(is_answer_line("ANS 12\n"));
  CHECK(is_answer_line("ANS -3"));
  CHECK_FALSE(is_answer_line("3+4=7\n"));
}

TEST_CASE("style judge scores marked reasoning lines") {
  StyleJudgeSpec j;
  CHECK(j.score("1+1=2*\n2+1=3\nANS 3\n") == doctest::Approx(0.5));
  CHECK(j.judge("1+1=2*\n2+1=3\nANS 3\n") == 1);
  CHECK(j.judge("1+1=2\n2+1=3*\n3+1=4\nANS 4\n") == 0);
  CHECK(j.score("ANS 3\n") == 0.0);
}

TEST_CASE("pairs follow the accuracy and style recipes") {
  const auto problems = std::vector<ArithmeticProblem>{problem({1, 1}, {'+'})};
  const std::vector<std::string> texts = {"1+1=3\nANS 3\n", "1+1=2*\nANS 2\n", "1+1=2\nANS 2\n"};
  ResponseSampler sampler = [&](const std::string&, std::uint64_t stream) {
    static std::map<std::uint64_t, std::size_t> seen;
    return texts[seen.emplace(stream, seen.size()).first->second % texts.size()];
  };
  const auto rolls = sample_rollouts(sampler, problems, 3, StyleJudgeSpec{}, 9);
  REQUIRE(rolls.size() == 1);
  REQUIRE(rolls[0].size() == 3);
  const auto acc = accuracy_pairs_from(rolls);
  REQUIRE(acc.size() == 1);
  CHECK(verify(problems[0], acc[0].chosen).z == 1);
  CHECK(verify(problems[0], acc[0].rejected).z == 0);
  CHECK(acc[0].objective == kAccuracyObjective);
  const auto sty = style_pairs_from(rolls);
  REQUIRE(sty.size() == 1);
  CHECK(sty[0].chosen == "1+1=2*\nANS 2\n");
  CHECK(sty[0].objective == kStyleObjective);
  CHECK(TextPair::from_json(sty[0].to_json()) == sty[0]);
  CHECK(RolloutRecord::from_json(rolls[0][1].to_json()).text == rolls[0][1].text);
  CHECK_THROWS_AS(sample_rollouts(sampler, problems, 1, StyleJudgeSpec{}, 9), Error);
}

TEST_CASE("no pair is emitted when rollouts agree") {
  const auto problems = std::vector<ArithmeticProblem>{problem({1, 1}, {'+'})};
  ResponseSampler same = [](const std::string&, std::uint64_t) { return std::string("1+1=2\nANS 2\n"); };
  const auto rolls = sample_rollouts(same, problems, 4, StyleJudgeSpec{}, 1);
  CHECK(accuracy_pairs_from(rolls).empty());
  CHECK(style_pairs_from(rolls).empty());
}
