// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-action-head causal language model: one shared backbone, H objective
// heads W_i (d x |V|) producing z_i = W_i^T h, and a frozen reference head.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "policy/backbone.hpp"
#include "policy/tokenizer.hpp"

namespace mah::policy {

class PolicyModel {
 public:
  // Fresh model whose single head and reference head share one random init.
  static PolicyModel create(const ModelDims& dims, Tokenizer tokenizer,
                            std::uint64_t seed);
  PolicyModel(ModelDims dims, Backbone backbone, std::vector<Tensor> heads,
              Tensor reference_head, Tokenizer tokenizer);

  PolicyModel(PolicyModel&&) = default;
  PolicyModel& operator=(PolicyModel&&) = default;
  PolicyModel(const PolicyModel&) = delete;
  PolicyModel& operator=(const PolicyModel&) = delete;

  PolicyModel clone() const;

  const ModelDims& dims() const { return dims_; }
  int num_heads() const { return static_cast<int>(heads_.size()); }
  const Backbone& backbone() const { return backbone_; }
  const Tensor& head(int i) const;
  const std::vector<Tensor>& heads() const { return heads_; }
  const Tensor& reference_head() const { return reference_head_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  // Backbone followed by the objective heads; never the reference head.
  std::vector<Tensor> trainable_parameters() const;
  std::vector<Tensor> backbone_parameters() const {
    return backbone_.parameters();
  }

 private:
  ModelDims dims_;
  Backbone backbone_;
  std::vector<Tensor> heads_;
  Tensor reference_head_;
  Tokenizer tokenizer_;
};

struct EncodedPrompt {
  KvCache cache;
  std::vector<double> hidden;  // backbone output at the last prompt position
};

EncodedPrompt encode_prompt(const PolicyModel& model,
                            std::span<const int> prompt);
std::vector<double> step_forward(const PolicyModel& model, KvCache& cache,
                                 int token);

std::vector<double> head_logits(const PolicyModel& model,
                                std::span<const double> hidden, int head);
std::vector<double> reference_logits(const PolicyModel& model,
                                     std::span<const double> hidden);

enum class EnsembleMode {
  probability_mixture,  // sum_i w_i softmax(z_i)
  logit_average,        // softmax(sum_i w_i z_i)
};

/// Validates that w lies on the probability simplex (tolerance 1e-9).
void check_simplex(std::span<const double> w, std::size_t expected_size);

std::vector<double> ensemble_distribution(
    const PolicyModel& model, std::span<const double> hidden,
    std::span<const double> weights,
    EnsembleMode mode = EnsembleMode::probability_mixture);

/// Where per-token probabilities come from.
struct HeadSource {
  enum class Kind { head, ensemble, reference };
  Kind kind = Kind::head;
  int head = 0;
  std::vector<double> weights;
  EnsembleMode mode = EnsembleMode::probability_mixture;

  static HeadSource of_head(int i) { return {Kind::head, i, {}, {}}; }
  static HeadSource reference() { return {Kind::reference, 0, {}, {}}; }
  static HeadSource ensemble(std::vector<double> w,
                             EnsembleMode m = EnsembleMode::probability_mixture) {
    return {Kind::ensemble, 0, std::move(w), m};
  }
};

/// Next-token distribution at `hidden` under `source` (temperature 1).
std::vector<double> next_token_distribution(const PolicyModel& model,
                                            std::span<const double> hidden,
                                            const HeadSource& source);

/// Differentiable sum over response positions of log P(y_t | x, y_<t).
numcore::Tensor sequence_logprob_graph(const PolicyModel& model,
                                       const HeadSource& source,
                                       std::span<const int> prompt,
                                       std::span<const int> response);
double sequence_logprob(const PolicyModel& model, const HeadSource& source,
                        std::span<const int> prompt,
                        std::span<const int> response);

/// Builds an H-head model from a trained single-head model: each W_i is the
/// LM head plus scale * N(0,1) noise (distinct per head), and the reference
/// head is the unperturbed LM head.
PolicyModel init_heads(const PolicyModel& lm, int num_heads,
                       double perturb_scale, std::uint64_t seed);

}  // namespace mah::policy
