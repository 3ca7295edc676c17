// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/tasks.hpp"

#include <algorithm>

#include "common/error.hpp"

namespace mah::harness {

double OracleScorer::score(const std::string& prompt, const std::string& prefix,
                           const std::string& candidate) const {
  const auto problem = synth::parse_prompt(prompt);
  if (!problem)
    fail(ErrorCode::invalid_argument,
         "oracle scorer cannot parse prompt '" + prompt + "'");
  return synth::oracle_step_value(*problem, prefix, candidate);
}

prm::VerifiableTask arithmetic_task(const synth::ArithmeticProblem& problem) {
  auto concat = [](std::span<const std::string> steps, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += steps[i];
    return s;
  };
  prm::VerifiableTask task;
  task.step_reward = [problem, concat](std::size_t t,
                                       std::span<const std::string> steps) {
    return synth::oracle_step_value(problem, concat(steps, t), steps[t]);
  };
  task.is_terminal = [](const std::string& step) {
    return synth::is_answer_line(step);
  };
  task.outcome = [problem, concat](std::span<const std::string> steps) {
    return synth::verify(problem, concat(steps, steps.size())).z;
  };
  return task;
}

std::string sample_continuation(const policy::PolicyModel& model,
                                const SamplerSettings& s, const std::string& prompt,
                                const std::string& prefix, std::uint64_t stream) {
  const auto& tok = model.tokenizer();
  const auto tokens = tok.encode_prompt(prompt + prefix);
  const auto limit = static_cast<std::size_t>(model.dims().max_positions);
  if (tokens.size() + 1 >= limit) return "";
  decode::DecodeConfig cfg;
  cfg.k = 1;
  cfg.max_tokens = std::min(s.max_tokens, limit - tokens.size());
  cfg.boundary = decode::BoundaryCriteria::at_separator(
      tok.separator(), std::min(s.chunk_cap, cfg.max_tokens));
  cfg.sampling = s.sampling;
  cfg.seed = stream;
  cfg.source = s.source;
  return decode::sample_plain(model, tokens, cfg).text(tok);
}

prm::Continuation make_continuation(std::shared_ptr<const policy::PolicyModel> model,
                                    SamplerSettings s) {
  return [model, s](const std::string& prompt, const std::string& prefix,
                    std::uint64_t stream) {
    return sample_continuation(*model, s, prompt, prefix, stream);
  };
}

synth::ResponseSampler make_sampler(std::shared_ptr<const policy::PolicyModel> model,
                                    SamplerSettings s) {
  return [model, s](const std::string& prompt, std::uint64_t stream) {
    return sample_continuation(*model, s, prompt, "", stream);
  };
}

std::vector<std::string> trajectory_steps(const std::string& response,
                                          std::size_t max_steps) {
  std::vector<std::string> out;
  for (auto& line : synth::split_steps(response)) {
    if (out.size() >= max_steps) break;
    const bool terminal = synth::is_answer_line(line);
    out.push_back(std::move(line));
    if (terminal) break;
  }
  return out;
}

}  // namespace mah::harness
