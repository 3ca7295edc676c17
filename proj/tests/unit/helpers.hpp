// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "numcore/tensor.hpp"
#include "policy/model.hpp"

namespace mah::test {

inline numcore::Tensor random_tensor(numcore::Shape shape, std::uint64_t seed,
                                     bool requires_grad = true, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numcore::shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return numcore::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline policy::ModelDims tiny_dims(int heads = 1) {
  policy::ModelDims d;
  d.vocab_size = 32;
  d.hidden_dim = 16;
  d.layers = 2;
  d.attn_heads = 2;
  d.max_positions = 96;
  d.objective_heads = heads;
  return d;
}

inline policy::PolicyModel tiny_policy(std::uint64_t seed, int heads = 1) {
  auto lm = policy::PolicyModel::create(tiny_dims(), policy::Tokenizer(), seed);
  if (heads == 1) return lm;
  return policy::init_heads(lm, heads, 0.05, seed + 1);
}

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() /
              ("mahalign_test_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace mah::test
