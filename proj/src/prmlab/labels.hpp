// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Step-level supervision: hindsight value targets for verifiable tasks,
// majority-vote and direct-judge labels for judged objectives.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common/jsonl.hpp"

namespace mah::prm {

enum class LabelMode { value, majority, direct, outcome_bt };

const char* to_string(LabelMode mode);
LabelMode parse_label_mode(const std::string& s);

struct PrmLabelConfig {
  double gamma = 0.9;
  std::size_t rollouts = 5;  // M
  std::size_t max_steps = 20;
  LabelMode mode = LabelMode::value;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepTrajectory {
  std::string prompt;
  std::vector<std::string> steps;  // y_1..y_n, each ending with the separator
  std::optional<int> z;
  std::vector<double> step_rewards;

  std::string response() const;
  void validate() const;
};

struct ValueTarget {
  std::size_t step = 0;  // 0-based index t
  double target = 0.0;
  std::size_t rollouts = 0;
  std::vector<double> blended;  // r~_t^m, one per rollout
  std::vector<std::size_t> final_steps;  // n^m, 0-based
  std::vector<int> outcomes;             // z^m
  std::vector<bool> truncated;
};

/// Samples a continuation of prompt + prefix text from an independent stream.
using Continuation = std::function<std::string(
    const std::string& prompt, const std::string& prefix, std::uint64_t stream)>;

/// The verifier side of a verifiable task.
struct VerifiableTask {
  // r_t for steps[t] given steps[0..t).
  std::function<double(std::size_t t, std::span<const std::string> steps)>
      step_reward;
  std::function<bool(const std::string& step)> is_terminal;
  // z for a trajectory whose last step is terminal.
  std::function<int(std::span<const std::string> steps)> outcome;
};

/// Blended reward r~ = r + gamma^(n - t) * z.
double blended_reward(double r, double gamma, std::size_t n_minus_t, int z);

/// For every step t, M rollouts continue from y_1..y_t until a terminal step
/// or max_steps total steps; truncated rollouts get z = 0. Each rollout uses
/// its own final index n^m. Rollout m of step t draws from stream
/// derive_seed(cfg.seed, {t, m}).
std::vector<ValueTarget> hindsight_targets(const StepTrajectory& traj,
                                           const Continuation& rollout,
                                           const VerifiableTask& task,
                                           const PrmLabelConfig& cfg);

/// Returns the full-trajectory judgment: 1 positive, 0 negative.
using Judge =
    std::function<int(const std::string& prompt, const std::string& response)>;

/// 1 iff strictly more than half of the votes are positive.
int majority_indicator(std::span<const int> votes);

/// Judges M completions of the prefix; rollout m uses derive_seed(seed, {m}).
int majority_vote_label(const std::string& prompt, const std::string& prefix,
                        const Continuation& rollout, const Judge& judge,
                        std::size_t m, std::uint64_t seed);

int direct_judge_label(const std::string& prompt, const std::string& prefix,
                       const Judge& judge);

/// One supervised prefix. `steps` is y_1..y_t; `tag` is prepended to the
/// model input when datasets for several objectives are pooled.
struct LabeledExample {
  std::string prompt;
  std::vector<std::string> steps;
  LabelMode kind = LabelMode::value;
  double label = 0.0;
  std::string tag;

  std::string prefix_text() const;
  Json to_json() const;
  static LabeledExample from_json(const Json& j);
};

void write_labeled(const std::filesystem::path& path,
                   const std::vector<LabeledExample>& examples);
std::vector<LabeledExample> read_labeled(const std::filesystem::path& path);

}  // namespace mah::prm
