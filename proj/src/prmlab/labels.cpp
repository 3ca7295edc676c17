// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "prmlab/labels.hpp"

#include <cmath>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "synthtasks/arithmetic.hpp"

namespace mah::prm {

const char* to_string(LabelMode mode) {
  switch (mode) {
    case LabelMode::value: return "value";
    case LabelMode::majority: return "majority";
    case LabelMode::direct: return "direct";
    case LabelMode::outcome_bt: return "outcome-bt";
  }
  return "value";
}

LabelMode parse_label_mode(const std::string& s) {
  if (s == "value") return LabelMode::value;
  if (s == "majority") return LabelMode::majority;
  if (s == "direct") return LabelMode::direct;
  if (s == "outcome-bt") return LabelMode::outcome_bt;
  fail(ErrorCode::invalid_argument, "unknown label mode '" + s + "'");
}

void PrmLabelConfig::validate() const {
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  require(rollouts >= 1, "need at least one rollout per step");
  require(max_steps >= 1, "max_steps must be at least 1");
}

std::string StepTrajectory::response() const {
  std::string s;
  for (const auto& step : steps) s += step;
  return s;
}

void StepTrajectory::validate() const {
  require(!steps.empty(), "trajectory needs at least one step");
  for (double r : step_rewards)
    require(r >= 0.0 && r <= 1.0, "step reward outside [0, 1]");
  if (z) require(*z == 0 || *z == 1, "terminal outcome must be 0 or 1");
}

double blended_reward(double r, double gamma, std::size_t n_minus_t, int z) {
  return r + std::pow(gamma, static_cast<double>(n_minus_t)) * z;
}

std::vector<ValueTarget> hindsight_targets(const StepTrajectory& traj,
                                           const Continuation& rollout,
                                           const VerifiableTask& task,
                                           const PrmLabelConfig& cfg) {
  traj.validate();
  cfg.validate();
  require(cfg.mode == LabelMode::value, "hindsight targets need mode=value");
  std::vector<ValueTarget> out;
  std::string prefix;
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const std::span<const std::string> upto(traj.steps.data(), t + 1);
    prefix += traj.steps[t];
    const double r = task.step_reward(t, upto);
    require(r >= 0.0 && r <= 1.0, "step reward outside [0, 1]");
    ValueTarget vt;
    vt.step = t;
    vt.rollouts = cfg.rollouts;
    const bool finished = task.is_terminal(traj.steps[t]);
    const int z_now = finished ? task.outcome(upto) : 0;
    double total = 0.0;
    for (std::size_t m = 0; m < cfg.rollouts; ++m) {
      std::size_t n = t;
      int z = z_now;
      bool truncated = false;
      if (!finished) {
        std::vector<std::string> all(upto.begin(), upto.end());
        bool done = false;
        if (all.size() < cfg.max_steps) {
          const auto cont =
              rollout(traj.prompt, prefix, derive_seed(cfg.seed, {t, m}));
          for (auto& step : synth::split_steps(cont)) {
            all.push_back(std::move(step));
            if (task.is_terminal(all.back())) {
              done = true;
              break;
            }
            if (all.size() >= cfg.max_steps) break;
          }
        }
        n = all.size() - 1;
        truncated = !done;
        z = done ? task.outcome(all) : 0;
      }
      const double blended = blended_reward(r, cfg.gamma, n - t, z);
      vt.blended.push_back(blended);
      vt.final_steps.push_back(n);
      vt.outcomes.push_back(z);
      vt.truncated.push_back(truncated);
      total += blended;
    }
    vt.target = total / static_cast<double>(cfg.rollouts);
    out.push_back(std::move(vt));
  }
  return out;
}

int majority_indicator(std::span<const int> votes) {
  require(!votes.empty(), "majority vote needs at least one vote");
  std::size_t positive = 0;
  for (int v : votes) positive += v == 1 ? 1 : 0;
  // positive / M > 1/2, kept in integers.
  return 2 * positive > votes.size() ? 1 : 0;
}

int majority_vote_label(const std::string& prompt, const std::string& prefix,
                        const Continuation& rollout, const Judge& judge,
                        std::size_t m, std::uint64_t seed) {
  require(m >= 1, "majority vote needs M >= 1");
  std::vector<int> votes;
  votes.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto completion = rollout(prompt, prefix, derive_seed(seed, {i}));
    votes.push_back(judge(prompt, prefix + completion) == 1 ? 1 : 0);
  }
  return majority_indicator(votes);
}

int direct_judge_label(const std::string& prompt, const std::string& prefix,
                       const Judge& judge) {
  return judge(prompt, prefix) == 1 ? 1 : 0;
}

std::string LabeledExample::prefix_text() const {
  std::string s;
  for (const auto& step : steps) s += step;
  return s;
}

Json LabeledExample::to_json() const {
  return Json{{"prompt", prompt},
              {"prefix_steps", steps},
              {"label_kind", to_string(kind)},
              {"label", label},
              {"tag", tag}};
}

LabeledExample LabeledExample::from_json(const Json& j) {
  LabeledExample e;
  e.prompt = j.at("prompt").get<std::string>();
  e.steps = j.at("prefix_steps").get<std::vector<std::string>>();
  e.kind = parse_label_mode(j.at("label_kind").get<std::string>());
  e.label = j.at("label").get<double>();
  if (j.contains("tag")) e.tag = j.at("tag").get<std::string>();
  require(std::isfinite(e.label), "labeled example has a non-finite label");
  return e;
}

void write_labeled(const std::filesystem::path& path,
                   const std::vector<LabeledExample>& examples) {
  std::vector<Json> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples) rows.push_back(e.to_json());
  write_jsonl(path, rows);
}

std::vector<LabeledExample> read_labeled(const std::filesystem::path& path) {
  std::vector<LabeledExample> out;
  for (const auto& j : read_jsonl(path)) out.push_back(LabeledExample::from_json(j));
  return out;
}

}  // namespace mah::prm
