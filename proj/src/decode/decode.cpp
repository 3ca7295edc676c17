// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "decode/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mah::decode {

using policy::KvCache;
using policy::PolicyModel;

BoundaryCriteria BoundaryCriteria::at_separator(int id, std::size_t cap) {
  BoundaryCriteria b;
  b.kind = Kind::separator;
  b.separator = id;
  b.chunk_cap = cap;
  return b;
}

BoundaryCriteria BoundaryCriteria::at_terminators(std::vector<int> ids,
                                                  std::size_t cap) {
  BoundaryCriteria b;
  b.kind = Kind::terminator_set;
  b.terminators = std::move(ids);
  b.chunk_cap = cap;
  return b;
}

BoundaryCriteria BoundaryCriteria::fixed(std::size_t length) {
  BoundaryCriteria b;
  b.kind = Kind::fixed_length;
  b.length = length;
  b.chunk_cap = length;
  return b;
}

void BoundaryCriteria::validate() const {
  require(chunk_cap >= 1, "boundary chunk cap must be at least 1");
  if (kind == Kind::fixed_length)
    require(length >= 1 && length <= chunk_cap,
            "fixed-length boundary needs 1 <= length <= cap");
  if (kind == Kind::separator)
    require(separator >= 0, "separator boundary needs a separator id");
  if (kind == Kind::terminator_set)
    require(!terminators.empty(), "terminator boundary needs terminators");
}

bool BoundaryCriteria::triggers(std::span<const int> chunk) const {
  if (chunk.empty()) return false;
  if (chunk.size() >= chunk_cap) return true;
  switch (kind) {
    case Kind::separator:
      return chunk.back() == separator;
    case Kind::terminator_set:
      return std::find(terminators.begin(), terminators.end(), chunk.back()) !=
             terminators.end();
    case Kind::fixed_length:
      return chunk.size() >= length;
  }
  return false;
}

const char* to_string(DecodeMode mode) {
  return mode == DecodeMode::cache_carry ? "cache-carry" : "re-encode";
}

DecodeMode parse_mode(const std::string& s) {
  if (s == "cache-carry") return DecodeMode::cache_carry;
  if (s == "re-encode") return DecodeMode::re_encode;
  fail(ErrorCode::invalid_argument,
       "unknown decode mode '" + s + "' (expected cache-carry or re-encode)");
}

void WeightedScorer::add(std::shared_ptr<const StepScorer> scorer,
                         double weight) {
  parts_.emplace_back(std::move(scorer), weight);
}

double WeightedScorer::score(const std::string& prompt,
                             const std::string& prefix,
                             const std::string& candidate) const {
  double s = 0.0;
  for (const auto& [scorer, w] : parts_)
    if (w != 0.0) s += w * scorer->score(prompt, prefix, candidate);
  return s;
}

void DecodeConfig::validate() const {
  require(k >= 1, "decode needs K >= 1");
  boundary.validate();
  require(max_tokens >= boundary.chunk_cap,
          "token budget must be at least the per-chunk cap");
  require(sampling.temperature > 0.0, "temperature must be positive");
  require(sampling.top_p > 0.0 && sampling.top_p <= 1.0,
          "top_p must lie in (0, 1]");
  require(sampling.top_k >= 1, "top_k must be at least 1");
}

double CostLedger::mean_candidate_length() const {
  std::size_t n = 0, total = 0;
  for (const auto& step : candidate_lengths)
    for (auto len : step) {
      total += len;
      ++n;
    }
  return n == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(n);
}

Json CostLedger::to_json() const {
  return Json{{"prompt_len", prompt_len},
              {"committed_tokens", committed_tokens},
              {"steps", steps},
              {"candidate_tokens", candidate_tokens},
              {"token_forwards", token_forwards},
              {"prompt_reencodes", prompt_reencodes},
              {"reencoded_positions", reencoded_positions},
              {"candidate_lengths", candidate_lengths}};
}

CostLedger CostLedger::from_json(const Json& j) {
  CostLedger l;
  l.prompt_len = j.at("prompt_len").get<std::size_t>();
  l.committed_tokens = j.at("committed_tokens").get<std::size_t>();
  l.steps = j.at("steps").get<std::size_t>();
  l.candidate_tokens = j.at("candidate_tokens").get<std::size_t>();
  l.token_forwards = j.at("token_forwards").get<std::size_t>();
  l.prompt_reencodes = j.at("prompt_reencodes").get<std::size_t>();
  l.reencoded_positions = j.at("reencoded_positions").get<std::size_t>();
  l.candidate_lengths =
      j.at("candidate_lengths").get<std::vector<std::vector<std::size_t>>>();
  return l;
}

int sample_token(std::vector<double> probs, const SamplingConfig& cfg,
                 int eos_id, Rng& rng, double* logprob) {
  const std::size_t v = probs.size();
  if (!cfg.allow_eos && eos_id >= 0 && static_cast<std::size_t>(eos_id) < v)
    probs[static_cast<std::size_t>(eos_id)] = 0.0;
  if (cfg.temperature != 1.0) {
    const double inv_t = 1.0 / cfg.temperature;
    for (auto& p : probs) p = p > 0.0 ? std::pow(p, inv_t) : 0.0;
  }
  const bool filter_k = static_cast<std::size_t>(cfg.top_k) < v;
  const bool filter_p = cfg.top_p < 1.0;
  if (filter_k || filter_p) {
    std::vector<std::size_t> order(v);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return probs[a] > probs[b];
    });
    double total = 0.0;
    for (double p : probs) total += p;
    std::vector<bool> keep(v, false);
    double cum = 0.0;
    const std::size_t k_limit =
        filter_k ? static_cast<std::size_t>(cfg.top_k) : v;
    for (std::size_t r = 0; r < k_limit; ++r) {
      keep[order[r]] = true;
      cum += probs[order[r]];
      if (filter_p && cum >= cfg.top_p * total) break;
    }
    for (std::size_t i = 0; i < v; ++i)
      if (!keep[i]) probs[i] = 0.0;
  }
  double total = 0.0;
  for (double p : probs) total += p;
  if (!(total > 0.0))
    fail(ErrorCode::numeric, "sampling support is empty after filtering");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double target = u(rng) * total;
  double cum = 0.0;
  std::size_t pick = v;
  for (std::size_t i = 0; i < v; ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    pick = i;
    if (target < cum) break;
  }
  if (logprob) *logprob = std::log(probs[pick] / total);
  return static_cast<int>(pick);
}

namespace {

// BOS only ever opens a sequence; a generated BOS would not survive a
// detokenize/retokenize round trip.
std::vector<double> next_probs(const PolicyModel& model, std::span<const double> hidden,
                               const policy::HeadSource& source) {
  auto probs = policy::next_token_distribution(model, hidden, source);
  probs[static_cast<std::size_t>(model.tokenizer().bos())] = 0.0;
  return probs;
}

// Samples one chunk from `cache`/`hidden`, advancing both in place.
Candidate sample_chunk(const PolicyModel& model, KvCache cache,
                       std::vector<double> hidden, const DecodeConfig& cfg,
                       std::size_t cap, Rng& rng) {
  Candidate c;
  const int eos = model.tokenizer().eos();
  while (true) {
    auto probs = next_probs(model, hidden, cfg.source);
    double lp = 0.0;
    const int tok = sample_token(std::move(probs), cfg.sampling, eos, rng, &lp);
    hidden = policy::step_forward(model, cache, tok);
    c.tokens.push_back(tok);
    c.logprobs.push_back(lp);
    if (tok == eos) {
      c.hit_eos = true;
      break;
    }
    if (c.tokens.size() >= cap || cfg.boundary.triggers(c.tokens)) break;
  }
  c.cache = std::move(cache);
  c.hidden = std::move(hidden);
  return c;
}

Rng candidate_rng(const DecodeConfig& cfg, std::size_t step, std::size_t k) {
  return Rng(derive_seed(cfg.seed, {step, k}));
}

void check_budget(const PolicyModel& model, std::span<const int> prompt,
                  const DecodeConfig& cfg) {
  cfg.validate();
  require(!prompt.empty(), "decode needs a non-empty prompt");
  const auto limit = static_cast<std::size_t>(model.dims().max_positions);
  if (prompt.size() + cfg.max_tokens > limit)
    fail(ErrorCode::invalid_argument,
         "prompt (" + std::to_string(prompt.size()) + ") + token budget (" +
             std::to_string(cfg.max_tokens) + ") exceeds max_positions " +
             std::to_string(limit));
}

std::size_t select_best(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  return best;
}

// Prompt tokens rebuilt from text, as a re-encoding baseline would.
std::vector<int> retokenize(const policy::Tokenizer& tok,
                            std::span<const int> prompt,
                            const std::vector<int>& committed) {
  std::vector<int> all(prompt.begin(), prompt.end());
  all.insert(all.end(), committed.begin(), committed.end());
  const bool bos = !all.empty() && all.front() == tok.bos();
  const std::string text = tok.detokenize(all);
  return bos ? tok.encode_prompt(text) : tok.tokenize(text);
}

// Shared step loop. `start` yields the (cache, hidden) a candidate begins
// from and charges its cost to the ledger; `commit` records the winner.
template <class Starter>
DecodeResult step_loop(const PolicyModel& model, const StepScorer* prm,
                       std::span<const int> prompt, const DecodeConfig& cfg,
                       Starter& starter) {
  DecodeResult res;
  res.ledger.prompt_len = prompt.size();
  const auto& tok = model.tokenizer();
  const std::string prompt_text =
      tok.detokenize(std::vector<int>(prompt.begin(), prompt.end()));
  std::string committed_text;
  bool done = false;
  std::size_t t = 0;
  while (!done && res.response.size() < cfg.max_tokens) {
    const std::size_t budget =
        std::min(cfg.boundary.chunk_cap, cfg.max_tokens - res.response.size());
    std::vector<Candidate> cands;
    cands.reserve(cfg.k);
    for (std::size_t k = 0; k < cfg.k; ++k) {
      auto [cache, hidden] = starter.start(res);
      Rng rng = candidate_rng(cfg, t, k);
      cands.push_back(sample_chunk(model, std::move(cache), std::move(hidden),
                                   cfg, budget, rng));
    }
    std::vector<double> scores(cands.size(), 0.0);
    std::vector<std::size_t> lengths;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      lengths.push_back(cands[k].tokens.size());
      res.ledger.candidate_tokens += cands[k].tokens.size();
      res.ledger.token_forwards += cands[k].tokens.size();
      if (prm)
        scores[k] = prm->score(prompt_text, committed_text,
                               tok.detokenize(cands[k].tokens));
    }
    const std::size_t best = select_best(scores);
    Candidate& chosen = cands[best];
    committed_text += tok.detokenize(chosen.tokens);
    res.response.insert(res.response.end(), chosen.tokens.begin(),
                        chosen.tokens.end());
    res.steps.push_back(chosen.tokens);
    res.scores.push_back(std::move(scores));
    res.selected.push_back(best);
    res.ledger.candidate_lengths.push_back(std::move(lengths));
    done = chosen.hit_eos;
    starter.commit(chosen);
    ++t;
  }
  res.ledger.steps = res.steps.size();
  res.ledger.committed_tokens = res.response.size();
  return res;
}

struct CarryStarter {
  policy::EncodedPrompt state;
  std::pair<KvCache, std::vector<double>> start(DecodeResult&) {
    return {state.cache.clone(), state.hidden};
  }
  void commit(Candidate& c) {
    state.cache = std::move(c.cache);
    state.hidden = std::move(c.hidden);
  }
};

struct ReencodeStarter {
  const PolicyModel& model;
  std::span<const int> prompt;
  std::pair<KvCache, std::vector<double>> start(DecodeResult& res) {
    const auto toks = retokenize(model.tokenizer(), prompt, res.response);
    auto enc = policy::encode_prompt(model, toks);
    res.ledger.token_forwards += toks.size();
    res.ledger.reencoded_positions += toks.size();
    res.ledger.prompt_reencodes += 1;
    return {std::move(enc.cache), std::move(enc.hidden)};
  }
  void commit(Candidate&) {}
};

}  // namespace

std::vector<Candidate> propose_candidates(const PolicyModel& model,
                                          const KvCache& cache,
                                          std::span<const double> hidden,
                                          const DecodeConfig& cfg,
                                          std::size_t step_index,
                                          std::size_t budget) {
  cfg.validate();
  require(budget >= 1, "no token budget left for candidates");
  const std::size_t cap = std::min(budget, cfg.boundary.chunk_cap);
  std::vector<Candidate> out;
  out.reserve(cfg.k);
  for (std::size_t k = 0; k < cfg.k; ++k) {
    Rng rng = candidate_rng(cfg, step_index, k);
    out.push_back(sample_chunk(model, cache.clone(),
                               std::vector<double>(hidden.begin(), hidden.end()),
                               cfg, cap, rng));
  }
  return out;
}

std::string DecodeResult::text(const policy::Tokenizer& tok) const {
  return tok.detokenize(response);
}

DecodeResult guided_decode(const PolicyModel& model, const StepScorer* prm,
                           std::span<const int> prompt,
                           const DecodeConfig& cfg) {
  check_budget(model, prompt, cfg);
  CarryStarter starter{policy::encode_prompt(model, prompt)};
  auto res = step_loop(model, prm, prompt, cfg, starter);
  res.ledger.token_forwards += prompt.size();
  return res;
}

DecodeResult reencode_decode(const PolicyModel& model, const StepScorer* prm,
                             std::span<const int> prompt,
                             const DecodeConfig& cfg) {
  check_budget(model, prompt, cfg);
  ReencodeStarter starter{model, prompt};
  return step_loop(model, prm, prompt, cfg, starter);
}

DecodeResult run_decode(const PolicyModel& model, const StepScorer* prm,
                        std::span<const int> prompt, const DecodeConfig& cfg) {
  return cfg.mode == DecodeMode::cache_carry
             ? guided_decode(model, prm, prompt, cfg)
             : reencode_decode(model, prm, prompt, cfg);
}

DecodeResult sample_plain(const PolicyModel& model, std::span<const int> prompt,
                          const DecodeConfig& cfg) {
  check_budget(model, prompt, cfg);
  DecodeResult res;
  res.ledger.prompt_len = prompt.size();
  auto enc = policy::encode_prompt(model, prompt);
  res.ledger.token_forwards += prompt.size();
  const int eos = model.tokenizer().eos();
  std::vector<int> chunk;
  std::size_t cap = std::min(cfg.boundary.chunk_cap, cfg.max_tokens);
  Rng rng = candidate_rng(cfg, 0, 0);
  auto close_chunk = [&] {
    res.steps.push_back(chunk);
    res.scores.push_back({0.0});
    res.selected.push_back(0);
    res.ledger.candidate_lengths.push_back({chunk.size()});
    chunk.clear();
  };
  while (res.response.size() < cfg.max_tokens) {
    auto probs = next_probs(model, enc.hidden, cfg.source);
    const int tok = sample_token(std::move(probs), cfg.sampling, eos, rng, nullptr);
    enc.hidden = policy::step_forward(model, enc.cache, tok);
    chunk.push_back(tok);
    res.response.push_back(tok);
    ++res.ledger.token_forwards;
    ++res.ledger.candidate_tokens;
    if (tok == eos) break;
    if (chunk.size() >= cap || cfg.boundary.triggers(chunk)) {
      close_chunk();
      rng = candidate_rng(cfg, res.steps.size(), 0);
      cap = std::min(cfg.boundary.chunk_cap, cfg.max_tokens - res.response.size());
    }
  }
  if (!chunk.empty()) close_chunk();
  res.ledger.steps = res.steps.size();
  res.ledger.committed_tokens = res.response.size();
  return res;
}

CostEstimate cost_estimate(std::uint64_t prompt_len, std::uint64_t steps,
                           std::uint64_t k, std::uint64_t step_len) {
  CostEstimate c;
  c.cache_carry = prompt_len + k * steps * step_len;
  for (std::uint64_t t = 0; t < steps; ++t)
    c.re_encode += k * (prompt_len + t * step_len + step_len);
  return c;
}

}  // namespace mah::decode
