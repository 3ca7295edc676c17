// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// PRM-guided step decoding. At each step K candidates are sampled from clones
// of the running key/value cache until the boundary criterion fires, each is
// scored, and the best candidate's end-state cache becomes the running cache.
// The re-encode baseline rebuilds the cache from text for every candidate.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "common/rng.hpp"
#include "policy/model.hpp"

namespace mah::decode {

struct BoundaryCriteria {
  enum class Kind { separator, terminator_set, fixed_length };
  Kind kind = Kind::separator;
  std::size_t chunk_cap = 24;  // hard per-chunk token cap
  int separator = -1;
  std::vector<int> terminators;
  std::size_t length = 0;  // fixed_length only

  static BoundaryCriteria at_separator(int id, std::size_t cap);
  static BoundaryCriteria at_terminators(std::vector<int> ids, std::size_t cap);
  static BoundaryCriteria fixed(std::size_t length);

  // True once `chunk` forms a complete step (cap included).
  bool triggers(std::span<const int> chunk) const;
  void validate() const;
};

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  int top_k = 50;
  bool allow_eos = true;
};

enum class DecodeMode { cache_carry, re_encode };

const char* to_string(DecodeMode mode);
DecodeMode parse_mode(const std::string& s);

/// Scores a candidate step given the prompt and committed text. Higher is
/// better. Implementations must be deterministic and read-only.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual double score(const std::string& prompt, const std::string& prefix,
                       const std::string& candidate) const = 0;
};

/// Weighted sum of several scorers.
class WeightedScorer : public StepScorer {
 public:
  void add(std::shared_ptr<const StepScorer> scorer, double weight);
  double score(const std::string& prompt, const std::string& prefix,
               const std::string& candidate) const override;
  bool empty() const { return parts_.empty(); }

 private:
  std::vector<std::pair<std::shared_ptr<const StepScorer>, double>> parts_;
};

struct DecodeConfig {
  std::size_t k = 5;
  std::size_t max_tokens = 128;  // T_max
  BoundaryCriteria boundary;
  SamplingConfig sampling;
  std::uint64_t seed = 0;
  DecodeMode mode = DecodeMode::cache_carry;
  policy::HeadSource source = policy::HeadSource::of_head(0);

  void validate() const;
};

struct CostLedger {
  std::size_t prompt_len = 0;
  std::size_t committed_tokens = 0;
  std::size_t steps = 0;
  std::size_t candidate_tokens = 0;
  std::size_t token_forwards = 0;
  std::size_t prompt_reencodes = 0;
  std::size_t reencoded_positions = 0;
  std::vector<std::vector<std::size_t>> candidate_lengths;  // [step][k]

  double mean_candidate_length() const;
  Json to_json() const;
  static CostLedger from_json(const Json& j);
};

struct Candidate {
  std::vector<int> tokens;
  policy::KvCache cache;       // end-state cache
  std::vector<double> hidden;  // backbone output after the last token
  std::vector<double> logprobs;
  bool hit_eos = false;
};

/// Samples `cfg.k` candidates from independent clones of `cache`. Candidate
/// k at step t uses the RNG stream keyed by (seed, t, k).
std::vector<Candidate> propose_candidates(const policy::PolicyModel& model,
                                          const policy::KvCache& cache,
                                          std::span<const double> hidden,
                                          const DecodeConfig& cfg,
                                          std::size_t step_index,
                                          std::size_t budget);

struct DecodeResult {
  std::vector<int> response;
  std::vector<std::vector<int>> steps;
  std::vector<std::vector<double>> scores;
  std::vector<std::size_t> selected;
  CostLedger ledger;

  std::string text(const policy::Tokenizer& tok) const;
};

/// Cache-carrying guided decoding. `prm` may be null (all scores 0, so the
/// first candidate is always selected).
DecodeResult guided_decode(const policy::PolicyModel& model,
                           const StepScorer* prm, std::span<const int> prompt,
                           const DecodeConfig& cfg);

/// Same control flow, but every candidate re-tokenizes and re-encodes
/// prompt + committed text from scratch.
DecodeResult reencode_decode(const policy::PolicyModel& model,
                             const StepScorer* prm, std::span<const int> prompt,
                             const DecodeConfig& cfg);

/// Dispatches on cfg.mode.
DecodeResult run_decode(const policy::PolicyModel& model, const StepScorer* prm,
                        std::span<const int> prompt, const DecodeConfig& cfg);

/// Plain incremental sampling with no candidate branching. The RNG stream is
/// rekeyed to (seed, step, 0) at every boundary, matching K = 1 decoding.
DecodeResult sample_plain(const policy::PolicyModel& model,
                          std::span<const int> prompt, const DecodeConfig& cfg);

/// Draws a token from `probs` after temperature / top-k / top-p filtering.
/// Returns the token and writes log of its filtered probability.
int sample_token(std::vector<double> probs, const SamplingConfig& cfg,
                 int eos_id, Rng& rng, double* logprob);

struct CostEstimate {
  std::uint64_t cache_carry = 0;
  std::uint64_t re_encode = 0;
};

/// Exact token-forward counts for fixed step length L:
/// cache-carry = |x| + K N L, re-encode = sum_{t<N} K (|x| + t L + L).
CostEstimate cost_estimate(std::uint64_t prompt_len, std::uint64_t steps,
                           std::uint64_t k, std::uint64_t step_len);

}  // namespace mah::decode
