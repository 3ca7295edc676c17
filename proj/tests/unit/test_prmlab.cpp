// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>

#include <doctest.h>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "helpers.hpp"
#include "prmlab/labels.hpp"
#include "prmlab/reward_model.hpp"

using namespace mah;
using namespace mah::prm;

namespace {

// Toy task: a step is "g\n" (reward 1) or "b\n" (reward 0); "T1\n" and
// "T0\n" end the trajectory with that outcome.
VerifiableTask toy_task() {
  VerifiableTask t;
  t.step_reward = [](std::size_t idx, std::span<const std::string> steps) {
    return steps[idx][0] == 'g' || steps[idx] == "T1\n" ? 1.0 : 0.0;
  };
  t.is_terminal = [](const std::string& s) { return s[0] == 'T'; };
  t.outcome = [](std::span<const std::string> steps) {
    return steps.back() == "T1\n" ? 1 : 0;
  };
  return t;
}

const std::vector<std::string> kScripts = {"g\nT1\n", "b\nb\nT0\n", "T1\n",
                                           "g\ng\ng\ng\ng\ng\ng\ng\ng\n", "g\nb"};

Continuation toy_rollout() {
  return [](const std::string&, const std::string&, std::uint64_t stream) {
    return kScripts[stream % kScripts.size()];
  };
}

// Brute-force recomputation: enumerate the rollout, walk its lines, blend.
double brute_target(const std::vector<std::string>& steps, std::size_t t,
                    const PrmLabelConfig& cfg) {
  auto reward = [](const std::string& s) { return s[0] == 'g' || s == "T1\n" ? 1.0 : 0.0; };
  const double r = reward(steps[t]);
  if (steps[t][0] == 'T') return r + (steps[t] == "T1\n" ? 1.0 : 0.0);
  double sum = 0.0;
  for (std::size_t m = 0; m < cfg.rollouts; ++m) {
    std::size_t count = t + 1;
    int z = 0;
    if (count < cfg.max_steps) {
      const std::string text = kScripts[derive_seed(cfg.seed, {t, m}) % kScripts.size()];
      std::size_t pos = 0;
      while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        const std::string line =
            text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos + 1);
        pos = nl == std::string::npos ? text.size() : nl + 1;
        ++count;
        if (line[0] == 'T') {
          z = line == "T1\n" ? 1 : 0;
          break;
        }
        if (count >= cfg.max_steps) break;
      }
    }
    const std::size_t n = count - 1;
    sum += r + std::pow(cfg.gamma, static_cast<double>(n - t)) * z;
  }
  return sum / static_cast<double>(cfg.rollouts);
}

}  // namespace

TEST_CASE("hindsight targets match a brute-force recomputation") {
  StepTrajectory traj;
  traj.prompt = "p";
  traj.steps = {"g\n", "b\n", "g\n", "T1\n"};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (std::size_t max_steps : {3u, 6u, 20u}) {
      PrmLabelConfig cfg;
      cfg.seed = seed;
      cfg.rollouts = 4;
      cfg.max_steps = max_steps;
      const auto targets = hindsight_targets(traj, toy_rollout(), toy_task(), cfg);
      REQUIRE(targets.size() == traj.steps.size());
      for (std::size_t t = 0; t < targets.size(); ++t) {
        CHECK(targets[t].target == brute_target(traj.steps, t, cfg));
        CHECK(targets[t].target >= 0.0);
        CHECK(targets[t].target <= 2.0);
        CHECK(targets[t].blended.size() == cfg.rollouts);
      }
    }
  }
}

TEST_CASE("terminal steps need no rollouts") {
  StepTrajectory traj;
  traj.prompt = "p";
  traj.steps = {"T1\n"};
  std::size_t calls = 0;
  Continuation counting = [&](const std::string&, const std::string&, std::uint64_t) {
    ++calls;
    return std::string("T0\n");
  };
  PrmLabelConfig cfg;
  const auto t = hindsight_targets(traj, counting, toy_task(), cfg);
  CHECK(calls == 0);
  CHECK(t[0].target == 2.0);
}

TEST_CASE("blended reward discounts the terminal outcome") {
  CHECK(blended_reward(1.0, 0.9, 0, 1) == 2.0);
  CHECK(blended_reward(0.0, 0.9, 2, 1) == doctest::Approx(0.81));
  CHECK(blended_reward(1.0, 0.9, 5, 0) == 1.0);
}

TEST_CASE("majority vote matches the strict-majority indicator for every pattern") {
  for (std::size_t m = 1; m <= 8; ++m) {
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      std::vector<int> votes(m);
      std::size_t pos = 0;
      for (std::size_t i = 0; i < m; ++i) pos += (votes[i] = (mask >> i) & 1u);
      const int expected = pos * 2 > m ? 1 : 0;
      CHECK(majority_indicator(votes) == expected);
      // Same pattern routed through rollouts and a judge.
      const std::uint64_t seed = 77 + mask;
      Continuation rollout = [&](const std::string&, const std::string&, std::uint64_t s) {
        for (std::size_t i = 0; i < m; ++i)
          if (derive_seed(seed, {i}) == s) return std::string(votes[i] ? "Y" : "N");
        return std::string("?");
      };
      Judge judge = [](const std::string&, const std::string& r) { return r.back() == 'Y'; };
      CHECK(majority_vote_label("x", "", rollout, judge, m, seed) == expected);
    }
  }
  CHECK_THROWS_AS(majority_indicator(std::vector<int>{}), Error);
}

TEST_CASE("labeled examples round-trip through JSONL") {
  test::TempDir dir("labels");
  std::vector<LabeledExample> ex = {
      {"1+2:", {"1+2=3\n"}, LabelMode::value, 1.9, ""},
      {"1+2:", {"1+2=3*\n", "ANS 3\n"}, LabelMode::direct, 1.0, "#1"},
  };
  write_labeled(dir.path() / "l.jsonl", ex);
  const auto back = read_labeled(dir.path() / "l.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].steps == ex[1].steps);
  CHECK(back[1].kind == LabelMode::direct);
  CHECK(back[1].tag == "#1");
  CHECK(back[0].prefix_text() == "1+2=3\n");
  CHECK(parse_label_mode("outcome-bt") == LabelMode::outcome_bt);
  CHECK_THROWS_AS(parse_label_mode("nope"), Error);
}

TEST_CASE("prompt split is disjoint, complete and seeded") {
  std::vector<std::string> prompts;
  for (int i = 0; i < 50; ++i) prompts.push_back("p" + std::to_string(i % 17));
  const auto [tr, te] = split_by_prompt(prompts, 0.3, 5);
  CHECK(tr.size() + te.size() == prompts.size());
  std::set<std::string> train_p, test_p;
  for (auto i : tr) train_p.insert(prompts[i]);
  for (auto i : te) test_p.insert(prompts[i]);
  for (const auto& p : test_p) CHECK(train_p.count(p) == 0);
  CHECK_FALSE(test_p.empty());
  const auto again = split_by_prompt(prompts, 0.3, 5);
  CHECK(again.first == tr);
  CHECK_THROWS_AS(split_by_prompt(prompts, 1.0, 5), Error);
}

TEST_CASE("prefix groups share one forward and keep every label") {
  auto model = RewardModel::create(RewardKind::value, test::tiny_dims(), policy::Tokenizer(), 1);
  std::vector<LabeledExample> ex = {
      {"1+2:", {"1+2=3\n"}, LabelMode::value, 1.0, ""},
      {"1+2:", {"1+2=3\n", "ANS 3\n"}, LabelMode::value, 2.0, ""},
      {"2+2:", {"2+2=4\n"}, LabelMode::value, 0.5, ""},
  };
  const auto groups = build_groups(model, ex);
  CHECK(groups.size() == 2);
  std::size_t labels = 0;
  for (const auto& g : groups) labels += g.labels.size();
  CHECK(labels == 3);
  // The graph loss equals the incremental metric.
  CHECK(value_loss_graph(model, groups).item() ==
        doctest::Approx(value_mse(model, groups)).epsilon(1e-12));
}

TEST_CASE("value PRM training fits a small dataset") {
  auto model = RewardModel::create(RewardKind::value, test::tiny_dims(), policy::Tokenizer(), 2);
  std::vector<LabeledExample> ex;
  for (int a = 0; a < 10; ++a) {
    const std::string p = std::to_string(a) + "+1:";
    ex.push_back({p, {std::to_string(a) + "+1=" + std::to_string(a + 1) + "\n"}, LabelMode::value, 1.5, ""});
    ex.push_back({p, {std::to_string(a) + "+1=" + std::to_string(a + 3) + "*\n"}, LabelMode::value, 0.2, ""});
  }
  PrmTrainConfig cfg;
  cfg.adam.lr = 3e-3;
  cfg.epochs = 40;
  cfg.batch_size = 4;
  cfg.heldout_fraction = 0.2;
  const auto rep = train_value_prm(model, ex, cfg);
  CHECK(rep.epoch_losses.back() < rep.epoch_losses.front());
  CHECK(rep.train_metric < 0.05);
  CHECK(rep.train_size + rep.heldout_size == ex.size());
}

TEST_CASE("classifier and BT training check their inputs") {
  auto cls = RewardModel::create(RewardKind::classifier, test::tiny_dims(), policy::Tokenizer(), 3);
  std::vector<LabeledExample> one_class = {{"1+1:", {"1+1=2\n"}, LabelMode::direct, 1.0, ""},
                                           {"1+2:", {"1+2=3\n"}, LabelMode::direct, 1.0, ""}};
  CHECK_THROWS_AS(train_classifier_prm(cls, one_class, PrmTrainConfig{}), Error);
  auto value = RewardModel::create(RewardKind::value, test::tiny_dims(), policy::Tokenizer(), 3);
  CHECK_THROWS_AS(train_classifier_prm(value, one_class, PrmTrainConfig{}), Error);

  auto bt = RewardModel::create(RewardKind::bradley_terry, test::tiny_dims(), policy::Tokenizer(), 4);
  std::vector<synth::TextPair> pairs;
  for (int a = 0; a < 10; ++a) {
    const std::string p = std::to_string(a) + "+0:";
    const std::string plain = std::to_string(a) + "+0=" + std::to_string(a) + "\n";
    pairs.push_back({p, std::to_string(a) + "+0=" + std::to_string(a) + "*\n", plain, "style"});
  }
  pairs.push_back({"1+1:", "same\n", "same\n", "style"});
  PrmTrainConfig cfg;
  cfg.adam.lr = 3e-3;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  const auto rep = train_bt_reward(bt, pairs, cfg);
  CHECK(rep.skipped == 1);
  CHECK(rep.train_metric == 1.0);
}

TEST_CASE("reward checkpoints round-trip and the cached scorer agrees") {
  test::TempDir dir("reward");
  auto model = RewardModel::create(RewardKind::classifier, test::tiny_dims(), policy::Tokenizer(), 5);
  save_reward_model(dir.path() / "r.ckpt", model);
  auto back = std::make_shared<const RewardModel>(load_reward_model(dir.path() / "r.ckpt"));
  CHECK(back->kind() == RewardKind::classifier);
  const double a = score_step(model, "1+2:", "1+2=3\n", "ANS 3\n");
  CHECK(a > 0.0);
  CHECK(a < 1.0);
  CHECK(score_step(*back, "1+2:", "1+2=3\n", "ANS 3\n") == a);
  RewardScorer scorer(back);
  CHECK(scorer.score("1+2:", "1+2=3\n", "ANS 3\n") == doctest::Approx(a).epsilon(1e-12));
  CHECK(scorer.score("1+2:", "1+2=3\n", "ANS 4\n") ==
        doctest::Approx(score_step(model, "1+2:", "1+2=3\n", "ANS 4\n")).epsilon(1e-12));
  CHECK_THROWS_AS(load_reward_model(dir.path() / "none.ckpt"), Error);
}
