// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Scalar reward models over (prompt, prefix) text: a transformer backbone
// read out by a linear head over the last hidden state and the causal mean of
// all hidden states so far. The mean lets the head see per-position evidence
// (such as a wrong digit) that the last position cannot attend to at the top
// layer. Three training regimes: value regression, binary classification and
// Bradley-Terry ranking.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "decode/decode.hpp"
#include "numcore/adam.hpp"
#include "policy/backbone.hpp"
#include "policy/tokenizer.hpp"
#include "prmlab/labels.hpp"
#include "synthtasks/pairs.hpp"

namespace mah::prm {

using numcore::Tensor;

enum class RewardKind { value, classifier, bradley_terry };

const char* to_string(RewardKind kind);
RewardKind parse_reward_kind(const std::string& s);

/// Incremental readout features: the latest hidden state and the running
/// sum of all hidden states.
struct ReadoutState {
  std::vector<double> last;
  std::vector<double> sum;
  std::size_t count = 0;

  void push(const std::vector<double>& hidden);
};

class RewardModel {
 public:
  static RewardModel create(RewardKind kind, const policy::ModelDims& dims,
                            policy::Tokenizer tokenizer, std::uint64_t seed);
  // Starts from a copy of an existing backbone (e.g. the SFT policy's).
  static RewardModel from_backbone(RewardKind kind,
                                   const policy::Backbone& backbone,
                                   policy::Tokenizer tokenizer,
                                   std::uint64_t seed);
  RewardModel(RewardKind kind, policy::Backbone backbone, Tensor head_w,
              Tensor pool_w, Tensor head_b, policy::Tokenizer tokenizer);

  RewardModel(RewardModel&&) = default;
  RewardModel& operator=(RewardModel&&) = default;
  RewardModel(const RewardModel&) = delete;
  RewardModel& operator=(const RewardModel&) = delete;
  RewardModel clone() const;

  RewardKind kind() const { return kind_; }
  const policy::ModelDims& dims() const { return backbone_.dims(); }
  const policy::Backbone& backbone() const { return backbone_; }
  const Tensor& head_w() const { return head_w_; }  // [d x 1], last state
  const Tensor& pool_w() const { return pool_w_; }  // [d x 1], mean state
  const Tensor& head_b() const { return head_b_; }  // [1]
  const policy::Tokenizer& tokenizer() const { return tokenizer_; }
  std::vector<Tensor> parameters() const;

  // BOS + tag + prompt + text.
  std::vector<int> encode(const std::string& tag, const std::string& prompt,
                          const std::string& text) const;

  // Differentiable raw scores read out at `positions` of one sequence.
  Tensor raw_scores_graph(std::span<const int> tokens,
                          std::span<const std::size_t> positions) const;
  // Raw score at the last token, computed incrementally without a graph.
  double raw_score(std::span<const int> tokens) const;
  double head_readout(const ReadoutState& state) const;
  // Classifier scores pass through a sigmoid; other kinds are raw.
  double output(double raw) const;

 private:
  RewardKind kind_;
  policy::Backbone backbone_;
  Tensor head_w_;
  Tensor pool_w_;
  Tensor head_b_;
  policy::Tokenizer tokenizer_;
};

/// P(x, y_1..y_t, y^k): value -> predicted value, classifier -> positive
/// probability, BT -> raw score. Higher is better for every kind.
double score_step(const RewardModel& prm, const std::string& prompt,
                  const std::string& prefix, const std::string& candidate,
                  const std::string& tag = "");

/// Several labeled prefixes of one token sequence share a single forward.
struct TokenGroup {
  std::vector<int> tokens;
  std::vector<std::size_t> positions;
  std::vector<double> labels;
};

std::vector<TokenGroup> build_groups(const RewardModel& model,
                                     std::span<const LabeledExample> examples);

// Mean squared error over every labeled position in the groups.
Tensor value_loss_graph(const RewardModel& model,
                        std::span<const TokenGroup> groups);
// Mean binary cross-entropy (labels 0/1).
Tensor classifier_loss_graph(const RewardModel& model,
                             std::span<const TokenGroup> groups);

struct TokenPair {
  std::vector<int> chosen;
  std::vector<int> rejected;
};
// Mean of -log sigmoid(R(chosen) - R(rejected)).
Tensor bt_loss_graph(const RewardModel& model, std::span<const TokenPair> pairs);

struct PrmTrainConfig {
  numcore::AdamConfig adam{};
  std::size_t epochs = 10;
  std::size_t batch_size = 16;  // sequences per optimizer step
  double heldout_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string tag;  // prepended to BT inputs
};

struct PrmTrainReport {
  std::size_t train_size = 0;
  std::size_t heldout_size = 0;
  // MSE for value models, accuracy for classifiers and BT ranking.
  double train_metric = 0.0;
  double heldout_metric = 0.0;
  std::vector<double> epoch_losses;
  std::size_t skipped = 0;
};

/// Splits by prompt so every prefix of a held-out problem stays held out.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_prompt(
    std::span<const std::string> prompts, double heldout_fraction,
    std::uint64_t seed);

PrmTrainReport train_value_prm(RewardModel& model,
                               const std::vector<LabeledExample>& data,
                               const PrmTrainConfig& cfg);
PrmTrainReport train_classifier_prm(RewardModel& model,
                                    const std::vector<LabeledExample>& data,
                                    const PrmTrainConfig& cfg);
PrmTrainReport train_bt_reward(RewardModel& model,
                               const std::vector<synth::TextPair>& pairs,
                               const PrmTrainConfig& cfg);

double value_mse(const RewardModel& model, std::span<const TokenGroup> groups);
double classifier_accuracy(const RewardModel& model,
                           std::span<const TokenGroup> groups);
double ranking_accuracy(const RewardModel& model,
                        std::span<const TokenPair> pairs);

void save_reward_model(const std::filesystem::path& path,
                       const RewardModel& model);
RewardModel load_reward_model(const std::filesystem::path& path);

/// Decode-time adapter. Keeps the encoded prompt + prefix of the last call so
/// the K candidates of one step only pay for their own tokens.
class RewardScorer : public decode::StepScorer {
 public:
  explicit RewardScorer(std::shared_ptr<const RewardModel> model,
                        std::string tag = "");
  double score(const std::string& prompt, const std::string& prefix,
               const std::string& candidate) const override;

 private:
  std::shared_ptr<const RewardModel> model_;
  std::string tag_;
  mutable std::string cached_key_;
  mutable policy::KvCache cached_cache_;
  mutable ReadoutState cached_state_;
};

}  // namespace mah::prm
