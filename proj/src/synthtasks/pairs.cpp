// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "synthtasks/pairs.hpp"

#include "common/rng.hpp"

namespace mah::synth {

Json RolloutRecord::to_json() const {
  return Json{{"problem_id", problem_id}, {"rollout_index", rollout_index},
              {"prompt", prompt},         {"text", text},
              {"z", z},                   {"style_score", style_score}};
}

RolloutRecord RolloutRecord::from_json(const Json& j) {
  RolloutRecord r;
  r.problem_id = j.at("problem_id").get<std::size_t>();
  r.rollout_index = j.at("rollout_index").get<std::size_t>();
  r.prompt = j.at("prompt").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.z = j.at("z").get<int>();
  r.style_score = j.at("style_score").get<double>();
  return r;
}

Json TextPair::to_json() const {
  return Json{{"prompt", prompt},
              {"chosen", chosen},
              {"rejected", rejected},
              {"objective", objective}};
}

TextPair TextPair::from_json(const Json& j) {
  return TextPair{j.at("prompt").get<std::string>(),
                  j.at("chosen").get<std::string>(),
                  j.at("rejected").get<std::string>(),
                  j.at("objective").get<std::string>()};
}

std::vector<std::vector<RolloutRecord>> sample_rollouts(
    const ResponseSampler& sampler,
    const std::vector<ArithmeticProblem>& problems, std::size_t rollouts,
    const StyleJudgeSpec& judge, std::uint64_t seed) {
  require(rollouts >= 2, "pair construction needs at least 2 rollouts");
  std::vector<std::vector<RolloutRecord>> out(problems.size());
  for (std::size_t p = 0; p < problems.size(); ++p) {
    const std::string prompt = problems[p].prompt();
    for (std::size_t r = 0; r < rollouts; ++r) {
      RolloutRecord rec;
      rec.problem_id = p;
      rec.rollout_index = r;
      rec.prompt = prompt;
      rec.text = sampler(prompt, derive_seed(seed, {p, r}));
      rec.z = verify(problems[p], rec.text).z;
      rec.style_score = judge.score(rec.text);
      out[p].push_back(std::move(rec));
    }
  }
  return out;
}

std::vector<TextPair> accuracy_pairs_from(
    const std::vector<std::vector<RolloutRecord>>& rollouts) {
  std::vector<TextPair> out;
  for (const auto& group : rollouts) {
    const RolloutRecord* good = nullptr;
    const RolloutRecord* bad = nullptr;
    for (const auto& r : group) {
      if (r.z == 1 && !good) good = &r;
      if (r.z == 0 && !bad) bad = &r;
    }
    if (good && bad && good->text != bad->text)
      out.push_back({good->prompt, good->text, bad->text, kAccuracyObjective});
  }
  return out;
}

std::vector<TextPair> style_pairs_from(
    const std::vector<std::vector<RolloutRecord>>& rollouts) {
  std::vector<TextPair> out;
  for (const auto& group : rollouts) {
    if (group.empty()) continue;
    const RolloutRecord* hi = &group[0];
    const RolloutRecord* lo = &group[0];
    for (const auto& r : group) {
      if (r.style_score > hi->style_score) hi = &r;
      if (r.style_score < lo->style_score) lo = &r;
    }
    if (hi->style_score > lo->style_score)
      out.push_back({hi->prompt, hi->text, lo->text, kStyleObjective});
  }
  return out;
}

std::vector<TextPair> build_accuracy_pairs(
    const ResponseSampler& sampler,
    const std::vector<ArithmeticProblem>& problems, std::size_t rollouts,
    std::uint64_t seed) {
  return accuracy_pairs_from(
      sample_rollouts(sampler, problems, rollouts, StyleJudgeSpec{}, seed));
}

std::vector<TextPair> build_style_pairs(
    const ResponseSampler& sampler,
    const std::vector<ArithmeticProblem>& problems, std::size_t rollouts,
    const StyleJudgeSpec& judge, std::uint64_t seed) {
  return style_pairs_from(sample_rollouts(sampler, problems, rollouts, judge, seed));
}

}  // namespace mah::synth
