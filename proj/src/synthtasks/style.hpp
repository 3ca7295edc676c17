// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace mah::synth {

/// Programmatic stand-in for an engagement judge: a response is "engaging"
/// when at least `threshold` of its reasoning lines carry the marker.
struct StyleJudgeSpec {
  char marker = '*';
  double threshold = 0.5;

  // Fraction of reasoning lines (lines before any ANS line) carrying the
  // marker; 0 when there are none.
  double score(std::string_view text) const;
  int judge(std::string_view text) const { return score(text) >= threshold ? 1 : 0; }
};

}  // namespace mah::synth
