// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Pipeline phases. Each phase reads and writes inside one run directory:
//
//   config.txt  metrics.csv  timings.csv
//   sft/     policy.ckpt corpus.jsonl
//   label/   value.jsonl style.jsonl rollouts.jsonl pairs.jsonl
//   prm/     value.ckpt classifier.ckpt bt.ckpt [unified.ckpt]
//   mahdpo/  policy.ckpt train_log.csv heldout_pairs.jsonl
//   decode/  outputs_<mode>.jsonl ledger_<mode>.csv
//   eval/    sweep.csv

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "harness/config.hpp"
#include "harness/metrics.hpp"

namespace mah::harness {

inline const std::vector<std::string>& pipeline_phases() {
  static const std::vector<std::string> p = {"sft",          "label",  "train-prm",
                                             "train-mahdpo", "decode", "eval"};
  return p;
}

struct RunContext {
  RunConfig cfg;
  std::filesystem::path root;
  std::string run_id;

  explicit RunContext(RunConfig config);
  std::uint64_t phase_seed(const std::string& phase) const;
  std::filesystem::path metrics_path() const { return root / "metrics.csv"; }
};

/// Hash of the configuration with the output directory left out, so a
/// relocated run keeps its id.
std::string run_id_of(const RunConfig& cfg);

/// Runs one named phase and records its metrics and wall-clock time.
void run_phase(const RunContext& ctx, const std::string& phase);

/// Runs every phase in order, saving the config first. Decode runs in the
/// configured mode and then the other one. A failing phase is rethrown with
/// the phase name prefixed; earlier artifacts stay in place.
void run_pipeline(const RunConfig& cfg);

struct GradcheckEntry {
  std::string loss;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradcheckSummary {
  std::vector<GradcheckEntry> entries;
  // isolation[j][b]: norm of dL/dW_j on a batch holding only objective b.
  std::vector<std::vector<double>> isolation;
  double additivity_error = 0.0;  // max |grad_mixed - sum_i grad_i|
  double seconds = 0.0;
  bool passed = false;

  std::string to_text() const;
};

GradcheckSummary run_gradcheck(std::uint64_t seed, double tolerance = 1e-4);

struct CostRow {
  std::string mode;
  std::size_t prompts = 0;
  std::uint64_t measured = 0;
  std::uint64_t predicted = 0;     // from per-step lengths, exact
  std::uint64_t closed_form = 0;   // cost_estimate with fixed step length
  bool fixed_length = false;       // every candidate had the same length
  bool matches = false;
};

struct CostReport {
  std::vector<CostRow> rows;
  double ratio = 0.0;  // re-encode / cache-carry measured
  bool passed = false;

  std::string to_text() const;
};

/// Reads ledger_<mode>.csv for both modes from a decode directory.
CostReport run_cost_report(const std::filesystem::path& decode_dir);

}  // namespace mah::harness
