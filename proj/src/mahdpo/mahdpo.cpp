// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "mahdpo/mahdpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "common/error.hpp"
#include "common/jsonl.hpp"
#include "common/rng.hpp"
#include "numcore/kernels.hpp"
#include "numcore/ops.hpp"

namespace mah::dpo {

namespace nc = mah::numcore;

void PreferencePair::validate(int num_heads) const {
  require(!prompt.empty(), "preference pair has an empty prompt");
  require(!chosen.empty() && !rejected.empty(),
          "preference pair has an empty response");
  require(chosen != rejected, "preference pair has chosen == rejected");
  if (objective < 0 || objective >= num_heads)
    fail(ErrorCode::invalid_argument,
         "objective id " + std::to_string(objective) + " outside [0," +
             std::to_string(num_heads) + ")");
}

ObjectiveMap make_objective_map(const std::vector<std::string>& names) {
  ObjectiveMap m;
  for (std::size_t i = 0; i < names.size(); ++i) {
    require(m.emplace(names[i], static_cast<int>(i)).second,
            "duplicate objective '" + names[i] + "'");
  }
  return m;
}

PreferencePair encode_pair(const policy::Tokenizer& tok, const synth::TextPair& p,
                           const ObjectiveMap& objectives) {
  auto it = objectives.find(p.objective);
  if (it == objectives.end())
    fail(ErrorCode::invalid_argument, "unknown objective '" + p.objective + "'");
  PreferencePair out;
  out.prompt = tok.encode_prompt(p.prompt);
  out.chosen = tok.tokenize(p.chosen);
  out.chosen.push_back(tok.eos());
  out.rejected = tok.tokenize(p.rejected);
  out.rejected.push_back(tok.eos());
  out.objective = it->second;
  return out;
}

std::vector<PreferencePair> encode_pairs(const policy::Tokenizer& tok,
                                         const std::vector<synth::TextPair>& pairs,
                                         const ObjectiveMap& objectives) {
  std::vector<PreferencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(tok, p, objectives));
  return out;
}

void write_pairs(const std::filesystem::path& path,
                 const std::vector<synth::TextPair>& pairs) {
  std::vector<Json> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(p.to_json());
  write_jsonl(path, rows);
}

std::vector<synth::TextPair> read_pairs(const std::filesystem::path& path) {
  std::vector<synth::TextPair> out;
  for (const auto& j : read_jsonl(path)) out.push_back(synth::TextPair::from_json(j));
  return out;
}

void TrainConfig::validate(int num_heads) const {
  require(beta > 0.0, "beta must be positive");
  require(batch_size >= 1, "batch size must be at least 1");
  if (!alpha.empty()) policy::check_simplex(alpha, static_cast<std::size_t>(num_heads));
}

std::vector<double> TrainConfig::resolved_alpha(int num_heads) const {
  if (!alpha.empty()) return alpha;
  return std::vector<double>(static_cast<std::size_t>(num_heads),
                             1.0 / static_cast<double>(num_heads));
}

std::size_t MiniBatch::total() const {
  std::size_t n = 0;
  for (const auto& b : by_objective) n += b.size();
  return n;
}

double reference_logprob(const PolicyModel& reference,
                         std::span<const int> prompt,
                         std::span<const int> response) {
  require(!response.empty(), "reference log-prob of an empty response");
  auto enc = policy::encode_prompt(reference, prompt);
  const auto v = static_cast<std::size_t>(reference.dims().vocab_size);
  std::vector<double> p(v);
  double total = 0.0;
  for (std::size_t t = 0; t < response.size(); ++t) {
    auto z = policy::reference_logits(reference, enc.hidden);
    const double lse = nc::kernels::softmax_row(z.data(), v, p.data());
    total += z[static_cast<std::size_t>(response[t])] - lse;
    if (t + 1 < response.size())
      enc.hidden = policy::step_forward(reference, enc.cache, response[t]);
  }
  return total;
}

void precompute_reference(const PolicyModel& reference,
                          std::vector<PreferencePair>& pairs) {
  for (auto& p : pairs) {
    if (!p.ref_chosen) p.ref_chosen = reference_logprob(reference, p.prompt, p.chosen);
    if (!p.ref_rejected)
      p.ref_rejected = reference_logprob(reference, p.prompt, p.rejected);
  }
}

PairLoss dpo_pair_loss(const PolicyModel& policy, const HeadSource& source,
                       const PolicyModel& reference, const PreferencePair& pair,
                       double beta) {
  require(beta > 0.0, "beta must be positive");
  require(!reference.reference_head().requires_grad(),
          "reference head must be frozen");
  const double ref_w = pair.ref_chosen
                           ? *pair.ref_chosen
                           : reference_logprob(reference, pair.prompt, pair.chosen);
  const double ref_l = pair.ref_rejected
                           ? *pair.ref_rejected
                           : reference_logprob(reference, pair.prompt, pair.rejected);
  Tensor lw = policy::sequence_logprob_graph(policy, source, pair.prompt, pair.chosen);
  Tensor ll =
      policy::sequence_logprob_graph(policy, source, pair.prompt, pair.rejected);
  for (auto [v, what] : {std::pair{lw.item(), "chosen"}, {ll.item(), "rejected"},
                         {ref_w, "reference chosen"}, {ref_l, "reference rejected"}})
    if (!std::isfinite(v))
      fail(ErrorCode::numeric, std::string("non-finite ") + what +
                                   " log-prob for sequence of " +
                                   std::to_string(pair.prompt.size()) + "+" +
                                   std::to_string(pair.chosen.size()) + " tokens");
  // beta * ((lw - ll) - (ref_w - ref_l))
  Tensor delta =
      nc::scale(nc::add_scalar(nc::sub(lw, ll), -(ref_w - ref_l)), beta);
  PairLoss out;
  out.delta = delta.item();
  out.loss = nc::scale(nc::log_sigmoid(delta), -1.0);
  return out;
}

MiniBatch route_batch(std::span<const PreferencePair> pairs, int num_heads) {
  require(!pairs.empty(), "cannot route an empty pair list");
  require(num_heads >= 1, "need at least one head");
  MiniBatch b;
  b.by_objective.resize(static_cast<std::size_t>(num_heads));
  for (const auto& p : pairs) {
    p.validate(num_heads);
    b.by_objective[static_cast<std::size_t>(p.objective)].push_back(p);
  }
  return b;
}

std::vector<MiniBatch> epoch_batches(std::span<const PreferencePair> pairs,
                                     int num_heads, const TrainConfig& cfg,
                                     std::size_t epoch) {
  require(!pairs.empty(), "cannot batch an empty pair list");
  cfg.validate(num_heads);
  const auto h = static_cast<std::size_t>(num_heads);
  std::vector<std::size_t> draws;
  if (cfg.balanced_batching) {
    std::vector<std::vector<std::size_t>> per(h);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      pairs[i].validate(num_heads);
      per[static_cast<std::size_t>(pairs[i].objective)].push_back(i);
    }
    std::size_t longest = 0;
    for (std::size_t o = 0; o < h; ++o) {
      Rng rng(derive_seed(cfg.seed, {epoch, o}));
      std::shuffle(per[o].begin(), per[o].end(), rng);
      longest = std::max(longest, per[o].size());
    }
    for (std::size_t r = 0; r < longest; ++r)
      for (std::size_t o = 0; o < h; ++o)
        if (!per[o].empty()) draws.push_back(per[o][r % per[o].size()]);
  } else {
    draws.resize(pairs.size());
    std::iota(draws.begin(), draws.end(), 0);
    Rng rng(derive_seed(cfg.seed, {epoch, h}));
    std::shuffle(draws.begin(), draws.end(), rng);
  }
  std::vector<MiniBatch> out;
  for (std::size_t start = 0; start < draws.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(draws.size(), start + cfg.batch_size);
    std::vector<PreferencePair> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(pairs[draws[i]]);
    out.push_back(route_batch(chunk, num_heads));
  }
  return out;
}

namespace {

struct CombinedGraph {
  Tensor loss;
  std::vector<double> head_loss, head_accuracy;
  std::vector<std::size_t> head_count;
};

CombinedGraph combined_graph(const PolicyModel& policy,
                             const PolicyModel& reference, const MiniBatch& batch,
                             const TrainConfig& cfg) {
  const int h = policy.num_heads();
  require(batch.by_objective.size() == static_cast<std::size_t>(h),
          "mini-batch has " + std::to_string(batch.by_objective.size()) +
              " objectives, policy has " + std::to_string(h) + " heads");
  require(batch.total() > 0, "every objective sub-batch is empty");
  cfg.validate(h);
  const auto alpha = cfg.resolved_alpha(h);
  CombinedGraph g;
  g.head_loss.assign(static_cast<std::size_t>(h), 0.0);
  g.head_accuracy.assign(static_cast<std::size_t>(h), 0.0);
  g.head_count.assign(static_cast<std::size_t>(h), 0);
  for (int i = 0; i < h; ++i) {
    const auto& bi = batch.by_objective[static_cast<std::size_t>(i)];
    if (bi.empty()) continue;
    Tensor sum_i;
    std::size_t wins = 0;
    for (const auto& pair : bi) {
      require(pair.objective == i, "pair routed to the wrong objective");
      auto pl = dpo_pair_loss(policy, HeadSource::of_head(i), reference, pair,
                              cfg.beta);
      wins += pl.delta > 0.0 ? 1 : 0;
      sum_i = sum_i.defined() ? nc::add(sum_i, pl.loss) : pl.loss;
    }
    const double n = static_cast<double>(bi.size());
    const auto idx = static_cast<std::size_t>(i);
    g.head_loss[idx] = sum_i.item() / n;
    g.head_accuracy[idx] = static_cast<double>(wins) / n;
    g.head_count[idx] = bi.size();
    Tensor term = nc::scale(sum_i, alpha[idx] / n);
    g.loss = g.loss.defined() ? nc::add(g.loss, term) : term;
  }
  g.loss = nc::sum(g.loss);
  return g;
}

double norm_of(std::span<const double> g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

}  // namespace

Tensor combined_loss(const PolicyModel& policy, const PolicyModel& reference,
                     const MiniBatch& batch, const TrainConfig& cfg) {
  return combined_graph(policy, reference, batch, cfg).loss;
}

StepMetrics train_step(PolicyModel& policy, const PolicyModel& reference,
                       nc::Adam& opt, const MiniBatch& batch,
                       const TrainConfig& cfg) {
  opt.zero_grad();
  auto g = combined_graph(policy, reference, batch, cfg);
  nc::backward(g.loss);
  StepMetrics m;
  m.loss = g.loss.item();
  m.head_loss = std::move(g.head_loss);
  m.head_accuracy = std::move(g.head_accuracy);
  m.head_count = std::move(g.head_count);
  double bb = 0.0;
  for (const auto& p : policy.backbone_parameters())
    for (double x : p.grad()) bb += x * x;
  m.backbone_grad_norm = std::sqrt(bb);
  for (int i = 0; i < policy.num_heads(); ++i)
    m.head_grad_norm.push_back(norm_of(policy.head(i).grad()));
  bool finite = std::isfinite(m.loss) && std::isfinite(m.backbone_grad_norm);
  for (double n : m.head_grad_norm) finite = finite && std::isfinite(n);
  if (!finite)
    fail(ErrorCode::numeric,
         "non-finite gradient; step aborted at optimizer step " +
             std::to_string(opt.steps_taken()) + " (loss " +
             std::to_string(m.loss) + ")");
  opt.step();
  return m;
}

std::vector<TrainLogRow> train_mahdpo(PolicyModel& policy,
                                      const PolicyModel& reference,
                                      std::vector<PreferencePair> pairs,
                                      const TrainConfig& cfg) {
  require(!pairs.empty(), "MAH-DPO needs at least one preference pair");
  cfg.validate(policy.num_heads());
  precompute_reference(reference, pairs);
  nc::Adam opt(policy.trainable_parameters(), cfg.adam);
  std::vector<TrainLogRow> log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(pairs, policy.num_heads(), cfg, epoch)) {
      auto m = train_step(policy, reference, opt, batch, cfg);
      spdlog::debug("mahdpo step {} loss {:.6f}", step, m.loss);
      log.push_back({step++, epoch, std::move(m)});
    }
  }
  return log;
}

void write_train_log(const std::filesystem::path& path,
                     const std::vector<TrainLogRow>& rows, int num_heads) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "step,epoch,loss";
  for (int i = 0; i < num_heads; ++i) out << ",loss_h" << i;
  for (int i = 0; i < num_heads; ++i) out << ",acc_h" << i;
  for (int i = 0; i < num_heads; ++i) out << ",count_h" << i;
  for (int i = 0; i < num_heads; ++i) out << ",gnorm_h" << i;
  out << ",gnorm_backbone\n";
  out.precision(17);
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.step << ',' << r.epoch << ',' << m.loss;
    for (double v : m.head_loss) out << ',' << v;
    for (double v : m.head_accuracy) out << ',' << v;
    for (auto v : m.head_count) out << ',' << v;
    for (double v : m.head_grad_norm) out << ',' << v;
    out << ',' << m.backbone_grad_norm << '\n';
  }
}

PreferenceEval evaluate_preferences(const PolicyModel& policy,
                                    const HeadSource& source,
                                    const PolicyModel& reference,
                                    std::span<const PreferencePair> pairs,
                                    double beta) {
  PreferenceEval e;
  e.count = pairs.size();
  if (pairs.empty()) return e;
  std::size_t wins = 0;
  double margins = 0.0;
  for (const auto& p : pairs) {
    const double ref_w =
        p.ref_chosen ? *p.ref_chosen : reference_logprob(reference, p.prompt, p.chosen);
    const double ref_l = p.ref_rejected
                             ? *p.ref_rejected
                             : reference_logprob(reference, p.prompt, p.rejected);
    const double lw = policy::sequence_logprob(policy, source, p.prompt, p.chosen);
    const double ll = policy::sequence_logprob(policy, source, p.prompt, p.rejected);
    const double delta = beta * ((lw - ref_w) - (ll - ref_l));
    wins += delta > 0.0 ? 1 : 0;
    margins += delta;
  }
  e.accuracy = static_cast<double>(wins) / static_cast<double>(pairs.size());
  e.mean_margin = margins / static_cast<double>(pairs.size());
  return e;
}

SftExample make_sft_example(const policy::Tokenizer& tok,
                            const std::string& prompt,
                            const std::string& response) {
  SftExample e;
  e.prompt = tok.encode_prompt(prompt);
  e.target = tok.tokenize(response);
  e.target.push_back(tok.eos());
  return e;
}

Tensor sft_loss_graph(const PolicyModel& model, std::span<const SftExample> batch) {
  require(!batch.empty(), "SFT loss over an empty batch");
  Tensor total;
  std::size_t tokens = 0;
  for (const auto& e : batch) {
    Tensor lp = policy::sequence_logprob_graph(model, HeadSource::of_head(0),
                                               e.prompt, e.target);
    total = total.defined() ? nc::add(total, lp) : lp;
    tokens += e.target.size();
  }
  return nc::scale(total, -1.0 / static_cast<double>(tokens));
}

double sft_token_accuracy(const PolicyModel& model,
                          std::span<const SftExample> data) {
  std::size_t correct = 0, total = 0;
  for (const auto& e : data) {
    auto enc = policy::encode_prompt(model, e.prompt);
    for (std::size_t t = 0; t < e.target.size(); ++t) {
      auto z = policy::head_logits(model, enc.hidden, 0);
      const auto pred = std::max_element(z.begin(), z.end()) - z.begin();
      correct += pred == e.target[t] ? 1 : 0;
      ++total;
      if (t + 1 < e.target.size())
        enc.hidden = policy::step_forward(model, enc.cache, e.target[t]);
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

SftReport train_sft(PolicyModel& model, const std::vector<SftExample>& data,
                    const SftConfig& cfg) {
  require(!data.empty(), "SFT dataset is empty");
  require(cfg.batch_size >= 1, "batch size must be at least 1");
  // Only the language-modeling head (head 0) and the backbone receive grads.
  auto params = model.backbone_parameters();
  params.push_back(model.head(0));
  nc::Adam opt(params, cfg.adam);
  SftReport rep;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(per_epoch * cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<SftExample> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      if (cfg.cosine_decay) {
        const double frac = static_cast<double>(opt.steps_taken()) / total_steps;
        opt.set_lr(cfg.adam.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
      }
      opt.zero_grad();
      Tensor loss = sft_loss_graph(model, batch);
      nc::backward(loss);
      opt.step();
      total += loss.item();
      ++batches;
    }
    rep.epoch_losses.push_back(total / static_cast<double>(batches));
    spdlog::info("sft epoch {} loss {:.5f}", epoch, rep.epoch_losses.back());
  }
  rep.token_accuracy = sft_token_accuracy(model, data);
  return rep;
}

}  // namespace mah::dpo
