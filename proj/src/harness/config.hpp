// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration as flat `key=value` text. Lines starting with '#' and
// blank lines are ignored; unknown keys and malformed values are errors.
// `to_text` always emits every key in a fixed order, so save -> load -> save
// is byte-identical.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mah::harness {

struct RunConfig {
  // run
  std::uint64_t seed = 1234;
  std::string out = "runs/default";

  // task
  std::size_t sft_problems = 6000;
  double sft_error_rate = 0.0;
  double marked_fraction = 0.5;
  double style_threshold = 0.5;

  // model
  int hidden_dim = 64;
  int layers = 2;
  int attn_heads = 4;
  int max_positions = 160;

  // sft
  std::size_t sft_epochs = 4;
  double sft_lr = 1e-3;
  std::size_t sft_batch_size = 4;

  // label
  std::size_t label_problems = 600;
  double label_gamma = 0.9;
  std::size_t label_rollouts = 5;
  std::size_t label_max_steps = 20;
  std::size_t pair_problems = 1200;
  std::size_t pair_rollouts = 8;

  // prm
  std::size_t prm_epochs = 6;
  double prm_lr = 1e-3;
  std::size_t prm_batch_size = 8;
  double prm_heldout_fraction = 0.2;
  bool prm_unified = false;

  // dpo
  double dpo_beta = 0.1;
  double dpo_lr = 3e-4;
  std::size_t dpo_epochs = 8;
  std::size_t dpo_batch_size = 16;
  bool dpo_balanced = true;
  double dpo_perturb_scale = 0.001;
  std::vector<double> dpo_alpha;  // empty = uniform
  double dpo_heldout_fraction = 0.2;

  // decode
  std::size_t decode_k = 5;
  std::size_t decode_max_tokens = 128;
  std::size_t decode_chunk_cap = 24;
  std::string decode_mode = "cache-carry";
  double decode_temperature = 1.0;
  double decode_top_p = 1.0;
  int decode_top_k = 50;
  std::string decode_guidance = "value:1";  // name:weight list, or none
  std::vector<double> decode_weights;        // head weights; empty = uniform
  std::size_t decode_problems = 50;
  std::string decode_boundary = "separator";  // separator or fixed:N
  bool decode_allow_eos = true;

  // eval
  std::size_t eval_problems = 500;
  std::size_t eval_seeds = 3;
  std::size_t eval_k = 5;
  std::size_t eval_sweep_problems = 200;
  std::size_t eval_learned_problems = 100;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  void set(const std::string& key, const std::string& value);
  void validate() const;

  static std::vector<std::string> keys();
  static std::string describe(const std::string& key);
};

/// Parses "a,b,c" into doubles; empty text gives an empty list.
std::vector<double> parse_double_list(const std::string& text);
std::string format_double_list(const std::vector<double>& values);

}  // namespace mah::harness
