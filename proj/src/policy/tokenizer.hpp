// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace mah::policy {

/// Character-level tokenizer over a fixed alphabet. Ids 0 and 1 are BOS and
/// EOS; symbol k of the alphabet gets id k + 2. Tokenizing is a per-character
/// map, so tokenize(a) is always a prefix of tokenize(a + b).
class Tokenizer {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr char kStepSeparator = '\n';

  // 30 symbols; with BOS/EOS the vocabulary is 32.
  static constexpr std::string_view kDefaultAlphabet =
      "0123456789+-=:* \nANSQ.,;?!()#/";

  explicit Tokenizer(std::string alphabet = std::string(kDefaultAlphabet));

  int vocab_size() const { return static_cast<int>(alphabet_.size()) + 2; }
  int bos() const { return kBos; }
  int eos() const { return kEos; }
  int separator() const { return id_of(kStepSeparator); }
  const std::string& alphabet() const { return alphabet_; }

  // Throws on characters outside the alphabet.
  int id_of(char c) const;
  bool is_special(int id) const { return id == kBos || id == kEos; }

  std::vector<int> tokenize(std::string_view text) const;
  // BOS + tokenize(text).
  std::vector<int> encode_prompt(std::string_view text) const;
  // Specials render as nothing, so detokenize(tokenize(s)) == s.
  std::string detokenize(const std::vector<int>& ids) const;
  std::string symbol(int id) const;

 private:
  std::string alphabet_;
  std::array<int, 256> ids_{};
};

}  // namespace mah::policy
