// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Verifiable arithmetic-chain task. A problem "3+4-2:" is solved one line per
// operation ("3+4=7", "7-2=5") and closed with "ANS 5". Lines end with the
// step separator '\n'.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "common/jsonl.hpp"

namespace mah::synth {

struct ArithmeticProblem {
  std::vector<int> operands;  // 2..6 values in [0, 9]
  std::vector<char> ops;      // '+' or '-', one fewer than operands

  std::string prompt() const;
  // Running left-to-right value after `steps` operations.
  int running(std::size_t steps) const;
  int answer() const { return running(ops.size()); }

  Json to_json() const;
  static ArithmeticProblem from_json(const Json& j);
  bool operator==(const ArithmeticProblem&) const = default;
};

/// Inverse of prompt(); nullopt when the text is not a problem prompt.
std::optional<ArithmeticProblem> parse_prompt(std::string_view prompt);

std::vector<ArithmeticProblem> gen_problems(std::uint64_t seed,
                                            std::size_t count);

struct Verification {
  int z = 0;                      // final answer correct
  std::vector<int> step_rewards;  // one per reasoning line before ANS
  bool truncated = false;         // no ANS line
};

/// z = 1 iff the ANS line states the true answer. A reasoning line earns 1
/// iff it states a correct equation for the matching operation starting from
/// the true running value, so an early error poisons every later line.
Verification verify(const ArithmeticProblem& problem, std::string_view response);

/// Correctness of the line a candidate adds after `prefix` (complete lines):
/// a reasoning line scores its step reward, an ANS line scores z, anything
/// else 0. This is the oracle step value used to guide decoding.
double oracle_step_value(const ArithmeticProblem& problem,
                         std::string_view prefix, std::string_view candidate);

/// Ground-truth worked solution. With `marked`, every reasoning line carries
/// the style marker.
std::string render_solution(const ArithmeticProblem& problem, bool marked,
                            char marker = '*');

/// Worked solution in which each line is wrong with probability `error_rate`
/// (result off by 1-2); later lines chain from the stated wrong value.
std::string render_noisy_solution(const ArithmeticProblem& problem,
                                  bool marked, double error_rate,
                                  std::mt19937_64& rng, char marker = '*');

/// True when the line is a final "ANS k" line.
bool is_answer_line(std::string_view line);

/// Splits text into lines keeping each '\n'; a trailing partial line is kept.
std::vector<std::string> split_steps(std::string_view text);

}  // namespace mah::synth
