// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "numcore/tensor.hpp"

namespace mah::policy {

using numcore::Tensor;

struct ModelDims {
  int vocab_size = 32;
  int hidden_dim = 64;
  int layers = 2;
  int attn_heads = 2;
  int max_positions = 256;
  int objective_heads = 1;

  void validate() const;
  int head_dim() const { return hidden_dim / attn_heads; }
  bool operator==(const ModelDims&) const = default;
};

/// Per-layer key/value history. Keys and values are flat rows of width d,
/// one row per processed position.
struct LayerKv {
  std::vector<double> keys;
  std::vector<double> values;
};

struct KvCache {
  std::vector<LayerKv> layers;
  std::size_t position_count = 0;

  // Copies are deep; a clone advances independently.
  KvCache clone() const { return *this; }
};

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor w_qkv, b_qkv;
  Tensor w_o, b_o;
  Tensor ln2_g, ln2_b;
  Tensor w_fc, b_fc;
  Tensor w_proj, b_proj;
};

/// Pre-LayerNorm transformer decoder with learned absolute positions. Produces
/// the final-LayerNorm hidden state h(x, y_<t) consumed by every head.
class Backbone {
 public:
  static Backbone init(const ModelDims& dims, Rng& rng);

  // Full-sequence graph forward: [T x d].
  Tensor forward(std::span<const int> tokens) const;

  // Cache-carrying forward of one token; returns the hidden state at the new
  // position. Arithmetic matches `forward` exactly.
  std::vector<double> step(KvCache& cache, int token) const;
  KvCache empty_cache() const;

  std::vector<Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  Backbone clone() const;

  const ModelDims& dims() const { return dims_; }
  // Rebuilds from arrays in `parameters()` order.
  static Backbone from_arrays(const ModelDims& dims, std::vector<Tensor> arrays);

  Tensor tok_emb;
  Tensor pos_emb;
  std::vector<LayerParams> layers;
  Tensor lnf_g, lnf_b;

 private:
  ModelDims dims_;
};

}  // namespace mah::policy
