// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-action-head DPO. Each preference pair is routed to the head of its
// objective; every pair also updates the shared backbone. The per-objective
// losses are combined as L = sum_i alpha_i * mean_{B_i} DPO(head i).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "numcore/adam.hpp"
#include "policy/model.hpp"
#include "synthtasks/pairs.hpp"

namespace mah::dpo {

using numcore::Tensor;
using policy::HeadSource;
using policy::PolicyModel;

struct PreferencePair {
  std::vector<int> prompt;
  std::vector<int> chosen;
  std::vector<int> rejected;
  int objective = 0;
  // Reference log-probs, filled once by precompute_reference.
  std::optional<double> ref_chosen;
  std::optional<double> ref_rejected;

  void validate(int num_heads) const;
};

/// Maps objective names to head indices in the given order.
using ObjectiveMap = std::map<std::string, int>;
ObjectiveMap make_objective_map(const std::vector<std::string>& names);

PreferencePair encode_pair(const policy::Tokenizer& tok, const synth::TextPair& p,
                           const ObjectiveMap& objectives);
std::vector<PreferencePair> encode_pairs(const policy::Tokenizer& tok,
                                         const std::vector<synth::TextPair>& pairs,
                                         const ObjectiveMap& objectives);

void write_pairs(const std::filesystem::path& path,
                 const std::vector<synth::TextPair>& pairs);
std::vector<synth::TextPair> read_pairs(const std::filesystem::path& path);

struct TrainConfig {
  double beta = 0.1;
  std::vector<double> alpha;  // empty means uniform 1/H
  numcore::AdamConfig adam{1e-4};
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  bool balanced_batching = true;
  std::uint64_t seed = 0;

  void validate(int num_heads) const;
  std::vector<double> resolved_alpha(int num_heads) const;
};

struct MiniBatch {
  std::vector<std::vector<PreferencePair>> by_objective;  // B_0..B_{H-1}
  std::size_t total() const;
};

struct PairLoss {
  Tensor loss;          // -log sigmoid(delta), differentiable
  double delta = 0.0;   // implicit margin
};

/// Reference log-prob of a response under the frozen snapshot.
double reference_logprob(const PolicyModel& reference,
                         std::span<const int> prompt,
                         std::span<const int> response);
void precompute_reference(const PolicyModel& reference,
                          std::vector<PreferencePair>& pairs);

/// delta = beta [(log pi(yw) - log ref(yw)) - (log pi(yl) - log ref(yl))].
PairLoss dpo_pair_loss(const PolicyModel& policy, const HeadSource& source,
                       const PolicyModel& reference, const PreferencePair& pair,
                       double beta);

/// Partitions pairs by objective.
MiniBatch route_batch(std::span<const PreferencePair> pairs, int num_heads);

/// Mini-batches for one epoch. Balanced: each objective's pairs are shuffled
/// (seeded per epoch), then drawn round-robin across non-empty objectives;
/// smaller objectives wrap so each epoch covers the largest objective once.
/// Unbalanced: one pooled shuffle, cut into consecutive batches.
std::vector<MiniBatch> epoch_batches(std::span<const PreferencePair> pairs,
                                     int num_heads, const TrainConfig& cfg,
                                     std::size_t epoch);

Tensor combined_loss(const PolicyModel& policy, const PolicyModel& reference,
                     const MiniBatch& batch, const TrainConfig& cfg);

struct StepMetrics {
  double loss = 0.0;
  std::vector<double> head_loss;      // mean over B_i (0 when empty)
  std::vector<double> head_accuracy;  // fraction with delta > 0
  std::vector<std::size_t> head_count;
  std::vector<double> head_grad_norm;
  double backbone_grad_norm = 0.0;
};

/// One backward on combined_loss and one optimizer update. Throws
/// Error(numeric) before updating when any gradient is non-finite.
StepMetrics train_step(PolicyModel& policy, const PolicyModel& reference,
                       numcore::Adam& opt, const MiniBatch& batch,
                       const TrainConfig& cfg);

struct TrainLogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  StepMetrics metrics;
};

std::vector<TrainLogRow> train_mahdpo(PolicyModel& policy,
                                      const PolicyModel& reference,
                                      std::vector<PreferencePair> pairs,
                                      const TrainConfig& cfg);
void write_train_log(const std::filesystem::path& path,
                     const std::vector<TrainLogRow>& rows, int num_heads);

struct PreferenceEval {
  double accuracy = 0.0;  // fraction of pairs with delta > 0
  double mean_margin = 0.0;
  std::size_t count = 0;
};
PreferenceEval evaluate_preferences(const PolicyModel& policy,
                                    const HeadSource& source,
                                    const PolicyModel& reference,
                                    std::span<const PreferencePair> pairs,
                                    double beta);

// ---- supervised warm-up ---------------------------------------------------

struct SftExample {
  std::vector<int> prompt;
  std::vector<int> target;  // includes the trailing EOS
};

SftExample make_sft_example(const policy::Tokenizer& tok,
                            const std::string& prompt,
                            const std::string& response);

struct SftConfig {
  numcore::AdamConfig adam{1e-3};
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  // Cosine decay from adam.lr towards zero over all steps.
  bool cosine_decay = false;
};

/// Mean next-token cross-entropy over target tokens only, from head 0.
Tensor sft_loss_graph(const PolicyModel& model, std::span<const SftExample> batch);

struct SftReport {
  std::vector<double> epoch_losses;
  double token_accuracy = 0.0;  // greedy, on the training data
};

SftReport train_sft(PolicyModel& model, const std::vector<SftExample>& data,
                    const SftConfig& cfg);
double sft_token_accuracy(const PolicyModel& model,
                          std::span<const SftExample> data);

}  // namespace mah::dpo
