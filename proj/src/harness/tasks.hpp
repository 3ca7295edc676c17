// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Glue between the arithmetic task, the policy sampler and the scorers.

#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "decode/decode.hpp"
#include "prmlab/labels.hpp"
#include "synthtasks/arithmetic.hpp"
#include "synthtasks/pairs.hpp"

namespace mah::harness {

/// Scores a candidate line by its exact step value under the verifier.
class OracleScorer : public decode::StepScorer {
 public:
  double score(const std::string& prompt, const std::string& prefix,
               const std::string& candidate) const override;
};

prm::VerifiableTask arithmetic_task(const synth::ArithmeticProblem& problem);

/// Sampling settings shared by rollouts and plain evaluation.
struct SamplerSettings {
  std::size_t max_tokens = 128;
  std::size_t chunk_cap = 24;
  decode::SamplingConfig sampling;
  policy::HeadSource source = policy::HeadSource::of_head(0);
};

/// Samples a continuation of prompt + prefix with plain incremental decoding.
std::string sample_continuation(const policy::PolicyModel& model,
                                const SamplerSettings& s, const std::string& prompt,
                                const std::string& prefix, std::uint64_t stream);

prm::Continuation make_continuation(std::shared_ptr<const policy::PolicyModel> model,
                                    SamplerSettings s);
synth::ResponseSampler make_sampler(std::shared_ptr<const policy::PolicyModel> model,
                                    SamplerSettings s);

/// Reasoning lines of a sampled response up to and including the first ANS
/// line, capped at `max_steps`.
std::vector<std::string> trajectory_steps(const std::string& response,
                                          std::size_t max_steps);

}  // namespace mah::harness
