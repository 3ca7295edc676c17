// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "synthtasks/style.hpp"

#include "synthtasks/arithmetic.hpp"

namespace mah::synth {

double StyleJudgeSpec::score(std::string_view text) const {
  std::size_t lines = 0, marked = 0;
  for (const auto& line : split_steps(text)) {
    if (line.rfind("ANS", 0) == 0) break;
    ++lines;
    if (line.find(marker) != std::string::npos) ++marked;
  }
  return lines == 0 ? 0.0 : static_cast<double>(marked) / static_cast<double>(lines);
}

}  // namespace mah::synth
