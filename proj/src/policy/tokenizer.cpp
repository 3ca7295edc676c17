// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "policy/tokenizer.hpp"

#include "common/error.hpp"

namespace mah::policy {

Tokenizer::Tokenizer(std::string alphabet) : alphabet_(std::move(alphabet)) {
  ids_.fill(-1);
  require(!alphabet_.empty(), "tokenizer alphabet is empty");
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    auto c = static_cast<unsigned char>(alphabet_[i]);
    require(ids_[c] < 0, std::string("duplicate symbol in alphabet: '") +
                             alphabet_[i] + "'");
    ids_[c] = static_cast<int>(i) + 2;
  }
}

int Tokenizer::id_of(char c) const {
  const int id = ids_[static_cast<unsigned char>(c)];
  if (id < 0)
    fail(ErrorCode::invalid_argument,
         "character outside tokenizer alphabet: code " +
             std::to_string(static_cast<int>(static_cast<unsigned char>(c))));
  return id;
}

std::vector<int> Tokenizer::tokenize(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id_of(c));
  return out;
}

std::vector<int> Tokenizer::encode_prompt(std::string_view text) const {
  std::vector<int> out{kBos};
  for (char c : text) out.push_back(id_of(c));
  return out;
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) out += symbol(id);
  return out;
}

std::string Tokenizer::symbol(int id) const {
  if (id == kBos || id == kEos) return {};
  require(id >= 2 && id < vocab_size(),
          "token id " + std::to_string(id) + " outside vocabulary");
  return std::string(1, alphabet_[static_cast<std::size_t>(id - 2)]);
}

}  // namespace mah::policy
