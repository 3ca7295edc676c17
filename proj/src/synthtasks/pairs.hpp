// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Rollout collection and the two preference-pair recipes: accuracy pairs
// (first correct vs first incorrect rollout) and style pairs (highest vs
// lowest judge score).

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "synthtasks/arithmetic.hpp"
#include "synthtasks/style.hpp"

namespace mah::synth {

inline constexpr const char* kAccuracyObjective = "accuracy";
inline constexpr const char* kStyleObjective = "style";

/// Samples one complete response for a prompt from an independent RNG stream.
using ResponseSampler =
    std::function<std::string(const std::string& prompt, std::uint64_t stream)>;

struct RolloutRecord {
  std::size_t problem_id = 0;
  std::size_t rollout_index = 0;
  std::string prompt;
  std::string text;
  int z = 0;
  double style_score = 0.0;

  Json to_json() const;
  static RolloutRecord from_json(const Json& j);
};

struct TextPair {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::string objective;

  Json to_json() const;
  static TextPair from_json(const Json& j);
  bool operator==(const TextPair&) const = default;
};

/// `rollouts` samples per problem; stream keyed by (seed, problem, rollout).
std::vector<std::vector<RolloutRecord>> sample_rollouts(
    const ResponseSampler& sampler, const std::vector<ArithmeticProblem>& problems,
    std::size_t rollouts, const StyleJudgeSpec& judge, std::uint64_t seed);

std::vector<TextPair> accuracy_pairs_from(
    const std::vector<std::vector<RolloutRecord>>& rollouts);
std::vector<TextPair> style_pairs_from(
    const std::vector<std::vector<RolloutRecord>>& rollouts);

std::vector<TextPair> build_accuracy_pairs(
    const ResponseSampler& sampler, const std::vector<ArithmeticProblem>& problems,
    std::size_t rollouts, std::uint64_t seed);
std::vector<TextPair> build_style_pairs(
    const ResponseSampler& sampler, const std::vector<ArithmeticProblem>& problems,
    std::size_t rollouts, const StyleJudgeSpec& judge, std::uint64_t seed);

}  // namespace mah::synth
