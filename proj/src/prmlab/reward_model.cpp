// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "prmlab/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "numcore/kernels.hpp"
#include "numcore/ops.hpp"
#include "policy/checkpoint.hpp"

namespace mah::prm {

namespace nc = mah::numcore;
using policy::Backbone;
using policy::Tokenizer;

const char* to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::value: return "value";
    case RewardKind::classifier: return "classifier";
    case RewardKind::bradley_terry: return "bt";
  }
  return "value";
}

RewardKind parse_reward_kind(const std::string& s) {
  if (s == "value") return RewardKind::value;
  if (s == "classifier") return RewardKind::classifier;
  if (s == "bt") return RewardKind::bradley_terry;
  fail(ErrorCode::invalid_argument, "unknown reward model kind '" + s + "'");
}

namespace {

Tensor fresh_head(std::size_t d, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 0.02);
  std::vector<double> w(d);
  for (auto& x : w) x = dist(rng);
  return Tensor::from({d, 1}, std::move(w), true);
}

}  // namespace

RewardModel RewardModel::create(RewardKind kind, const policy::ModelDims& dims,
                                Tokenizer tokenizer, std::uint64_t seed) {
  dims.validate();
  Rng rng(derive_seed(seed, "prm.init"));
  Backbone bb = Backbone::init(dims, rng);
  Tensor w = fresh_head(static_cast<std::size_t>(dims.hidden_dim), rng);
  Tensor pw = fresh_head(static_cast<std::size_t>(dims.hidden_dim), rng);
  return RewardModel(kind, std::move(bb), std::move(w), std::move(pw),
                     Tensor::from({1}, {0.0}, true), std::move(tokenizer));
}

RewardModel RewardModel::from_backbone(RewardKind kind, const Backbone& backbone,
                                       Tokenizer tokenizer, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "prm.head"));
  Tensor w = fresh_head(static_cast<std::size_t>(backbone.dims().hidden_dim), rng);
  Tensor pw = fresh_head(static_cast<std::size_t>(backbone.dims().hidden_dim), rng);
  return RewardModel(kind, backbone.clone(), std::move(w), std::move(pw),
                     Tensor::from({1}, {0.0}, true), std::move(tokenizer));
}

RewardModel::RewardModel(RewardKind kind, Backbone backbone, Tensor head_w,
                         Tensor pool_w, Tensor head_b, Tokenizer tokenizer)
    : kind_(kind),
      backbone_(std::move(backbone)),
      head_w_(std::move(head_w)),
      pool_w_(std::move(pool_w)),
      head_b_(std::move(head_b)),
      tokenizer_(std::move(tokenizer)) {
  const auto d = static_cast<std::size_t>(backbone_.dims().hidden_dim);
  for (const Tensor* w : {&head_w_, &pool_w_})
    if (w->shape() != nc::Shape{d, 1})
      fail(ErrorCode::shape_mismatch, "reward head shape " + nc::shape_str(w->shape()) +
                                          ", expected " + nc::shape_str({d, 1}));
  if (head_b_.shape() != nc::Shape{1})
    fail(ErrorCode::shape_mismatch,
         "reward bias shape " + nc::shape_str(head_b_.shape()) + ", expected [1]");
  require(tokenizer_.vocab_size() == backbone_.dims().vocab_size,
          "tokenizer does not match the reward model vocabulary");
}

RewardModel RewardModel::clone() const {
  return RewardModel(kind_, backbone_.clone(), head_w_.clone(), pool_w_.clone(),
                     head_b_.clone(), tokenizer_);
}

std::vector<Tensor> RewardModel::parameters() const {
  auto out = backbone_.parameters();
  out.push_back(head_w_);
  out.push_back(pool_w_);
  out.push_back(head_b_);
  return out;
}

std::vector<int> RewardModel::encode(const std::string& tag,
                                     const std::string& prompt,
                                     const std::string& text) const {
  auto tokens = tokenizer_.encode_prompt(tag + prompt + text);
  const auto limit = static_cast<std::size_t>(dims().max_positions);
  if (tokens.size() > limit)
    fail(ErrorCode::invalid_argument,
         "reward model input of " + std::to_string(tokens.size()) +
             " tokens exceeds max_positions " + std::to_string(limit));
  return tokens;
}

Tensor RewardModel::raw_scores_graph(std::span<const int> tokens,
                                     std::span<const std::size_t> positions) const {
  require(!positions.empty(), "no readout positions");
  for (auto p : positions)
    require(p < tokens.size(), "readout position beyond the sequence");
  Tensor h = backbone_.forward(tokens);
  // Constant row selectors: one-hot at each position, and the causal mean
  // up to it.
  const std::size_t n = positions.size(), len = tokens.size();
  std::vector<double> pick(n * len, 0.0), avg(n * len, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    pick[i * len + positions[i]] = 1.0;
    const double inv = 1.0 / static_cast<double>(positions[i] + 1);
    for (std::size_t j = 0; j <= positions[i]; ++j) avg[i * len + j] = inv;
  }
  Tensor last = nc::matmul(Tensor::from({n, len}, std::move(pick)), h);
  Tensor mean = nc::matmul(Tensor::from({n, len}, std::move(avg)), h);
  Tensor s = nc::add(nc::add(nc::matmul(last, head_w_), nc::matmul(mean, pool_w_)), head_b_);
  std::vector<std::size_t> rows(n), cols(n, 0);
  std::iota(rows.begin(), rows.end(), 0);
  return nc::gather(s, rows, cols);
}

void ReadoutState::push(const std::vector<double>& hidden) {
  if (sum.empty()) sum.assign(hidden.size(), 0.0);
  for (std::size_t j = 0; j < hidden.size(); ++j) sum[j] += hidden[j];
  last = hidden;
  ++count;
}

double RewardModel::head_readout(const ReadoutState& state) const {
  require(state.count > 0, "readout of an empty sequence");
  const std::size_t d = state.last.size();
  std::vector<double> mean(d);
  for (std::size_t j = 0; j < d; ++j) mean[j] = state.sum[j] / static_cast<double>(state.count);
  double a = 0.0, b = 0.0;
  nc::kernels::vec_mat(state.last.data(), head_w_.values().data(), d, 1, &a);
  nc::kernels::vec_mat(mean.data(), pool_w_.values().data(), d, 1, &b);
  return a + b + head_b_.values()[0];
}

double RewardModel::raw_score(std::span<const int> tokens) const {
  require(!tokens.empty(), "cannot score an empty sequence");
  auto cache = backbone_.empty_cache();
  ReadoutState state;
  for (int t : tokens) state.push(backbone_.step(cache, t));
  return head_readout(state);
}

double RewardModel::output(double raw) const {
  return kind_ == RewardKind::classifier ? nc::kernels::sigmoid(raw) : raw;
}

double score_step(const RewardModel& prm, const std::string& prompt,
                  const std::string& prefix, const std::string& candidate,
                  const std::string& tag) {
  return prm.output(prm.raw_score(prm.encode(tag, prompt, prefix + candidate)));
}

std::vector<TokenGroup> build_groups(const RewardModel& model,
                                     std::span<const LabeledExample> examples) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(examples.size());
  for (const auto& e : examples)
    seqs.push_back(model.encode(e.tag, e.prompt, e.prefix_text()));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return seqs[a] < seqs[b]; });
  // Walking lexicographic order backwards, a sequence that is a prefix of
  // the current group head joins that group.
  std::vector<TokenGroup> groups;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& s = seqs[*it];
    const bool joins =
        !groups.empty() && s.size() <= groups.back().tokens.size() &&
        std::equal(s.begin(), s.end(), groups.back().tokens.begin());
    if (!joins) groups.push_back(TokenGroup{s, {}, {}});
    groups.back().positions.push_back(s.size() - 1);
    groups.back().labels.push_back(examples[*it].label);
  }
  std::reverse(groups.begin(), groups.end());
  return groups;
}

namespace {

std::size_t label_count(std::span<const TokenGroup> groups) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.labels.size();
  return n;
}

template <class PerGroup>
Tensor mean_over_groups(std::span<const TokenGroup> groups, PerGroup&& f) {
  const std::size_t n = label_count(groups);
  require(n > 0, "loss over an empty dataset");
  Tensor total;
  for (const auto& g : groups) {
    Tensor part = f(g);
    total = total.defined() ? nc::add(total, part) : part;
  }
  return nc::scale(total, 1.0 / static_cast<double>(n));
}

}  // namespace

Tensor value_loss_graph(const RewardModel& model,
                        std::span<const TokenGroup> groups) {
  return mean_over_groups(groups, [&](const TokenGroup& g) {
    Tensor s = model.raw_scores_graph(g.tokens, g.positions);
    Tensor diff = nc::sub(s, Tensor::from({g.labels.size()}, g.labels));
    return nc::sum(nc::mul(diff, diff));
  });
}

Tensor classifier_loss_graph(const RewardModel& model,
                             std::span<const TokenGroup> groups) {
  return mean_over_groups(groups, [&](const TokenGroup& g) {
    Tensor s = model.raw_scores_graph(g.tokens, g.positions);
    // -log sigmoid(s) for positives, -log sigmoid(-s) for negatives.
    std::vector<double> sign(g.labels.size());
    for (std::size_t i = 0; i < sign.size(); ++i)
      sign[i] = g.labels[i] >= 0.5 ? 1.0 : -1.0;
    Tensor signed_s = nc::mul(s, Tensor::from({sign.size()}, sign));
    return nc::scale(nc::sum(nc::log_sigmoid(signed_s)), -1.0);
  });
}

Tensor bt_loss_graph(const RewardModel& model, std::span<const TokenPair> pairs) {
  require(!pairs.empty(), "BT loss over an empty pair set");
  Tensor total;
  for (const auto& p : pairs) {
    const std::size_t cw = p.chosen.size() - 1, cl = p.rejected.size() - 1;
    Tensor rw = model.raw_scores_graph(p.chosen, std::span(&cw, 1));
    Tensor rl = model.raw_scores_graph(p.rejected, std::span(&cl, 1));
    Tensor part = nc::scale(nc::log_sigmoid(nc::sub(rw, rl)), -1.0);
    total = total.defined() ? nc::add(total, part) : part;
  }
  return nc::scale(nc::sum(total), 1.0 / static_cast<double>(pairs.size()));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_prompt(
    std::span<const std::string> prompts, double heldout_fraction,
    std::uint64_t seed) {
  require(heldout_fraction >= 0.0 && heldout_fraction < 1.0,
          "held-out fraction must lie in [0, 1)");
  std::vector<std::string> unique;
  std::map<std::string, std::size_t> slot;
  for (const auto& p : prompts)
    if (slot.emplace(p, unique.size()).second) unique.push_back(p);
  std::vector<std::size_t> perm(unique.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "prm.split"));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_held = static_cast<std::size_t>(
      std::floor(heldout_fraction * static_cast<double>(unique.size())));
  std::vector<bool> held(unique.size(), false);
  for (std::size_t i = 0; i < n_held; ++i) held[perm[i]] = true;
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < prompts.size(); ++i)
    (held[slot.at(prompts[i])] ? test : train).push_back(i);
  return {train, test};
}

namespace {

template <class Item, class LossFn>
std::vector<double> fit(const RewardModel& model, const std::vector<Item>& items,
                        const PrmTrainConfig& cfg, LossFn&& loss_fn) {
  require(!items.empty(), "training set is empty");
  require(cfg.batch_size >= 1, "batch size must be at least 1");
  nc::Adam opt(model.parameters(), cfg.adam);
  std::vector<double> epoch_losses;
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Item> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(items[order[i]]);
      opt.zero_grad();
      Tensor loss = loss_fn(std::span<const Item>(batch));
      nc::backward(loss);
      opt.step();
      total += loss.item();
      ++batches;
    }
    epoch_losses.push_back(total / static_cast<double>(batches));
    spdlog::debug("reward model epoch {} loss {:.6f}", epoch, epoch_losses.back());
  }
  return epoch_losses;
}

template <class T>
std::vector<T> pick(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

std::vector<std::string> prompts_of(const std::vector<LabeledExample>& data) {
  std::vector<std::string> out;
  for (const auto& e : data) out.push_back(e.tag + e.prompt);
  return out;
}

}  // namespace

double value_mse(const RewardModel& model, std::span<const TokenGroup> groups) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    auto cache = model.backbone().empty_cache();
    std::size_t next = 0;
    std::vector<std::size_t> order(g.positions.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return g.positions[a] < g.positions[b];
    });
    ReadoutState state;
    for (std::size_t p = 0; p < g.tokens.size() && next < order.size(); ++p) {
      state.push(model.backbone().step(cache, g.tokens[p]));
      while (next < order.size() && g.positions[order[next]] == p) {
        const double e = model.head_readout(state) - g.labels[order[next]];
        total += e * e;
        ++n;
        ++next;
      }
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

double classifier_accuracy(const RewardModel& model,
                           std::span<const TokenGroup> groups) {
  std::size_t correct = 0, n = 0;
  for (const auto& g : groups) {
    auto cache = model.backbone().empty_cache();
    ReadoutState state;
    std::size_t done = 0;
    for (std::size_t p = 0; p < g.tokens.size(); ++p) {
      state.push(model.backbone().step(cache, g.tokens[p]));
      for (std::size_t i = 0; i < g.positions.size(); ++i) {
        if (g.positions[i] != p) continue;
        const int pred = model.head_readout(state) > 0.0 ? 1 : 0;
        correct += pred == (g.labels[i] >= 0.5 ? 1 : 0) ? 1 : 0;
        ++n;
        ++done;
      }
      if (done == g.positions.size()) break;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

double ranking_accuracy(const RewardModel& model,
                        std::span<const TokenPair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t wins = 0;
  for (const auto& p : pairs)
    wins += model.raw_score(p.chosen) > model.raw_score(p.rejected) ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(pairs.size());
}

PrmTrainReport train_value_prm(RewardModel& model,
                               const std::vector<LabeledExample>& data,
                               const PrmTrainConfig& cfg) {
  require(model.kind() == RewardKind::value, "train_value_prm needs a value model");
  require(!data.empty(), "value PRM dataset is empty");
  const auto prompts = prompts_of(data);
  auto [tr, te] = split_by_prompt(prompts, cfg.heldout_fraction, cfg.seed);
  const auto train = build_groups(model, pick(data, tr));
  const auto test = build_groups(model, pick(data, te));
  PrmTrainReport rep;
  rep.train_size = tr.size();
  rep.heldout_size = te.size();
  rep.epoch_losses = fit(model, train, cfg, [&](std::span<const TokenGroup> b) {
    return value_loss_graph(model, b);
  });
  rep.train_metric = value_mse(model, train);
  rep.heldout_metric = value_mse(model, test);
  return rep;
}

PrmTrainReport train_classifier_prm(RewardModel& model,
                                    const std::vector<LabeledExample>& data,
                                    const PrmTrainConfig& cfg) {
  require(model.kind() == RewardKind::classifier,
          "train_classifier_prm needs a classifier model");
  require(!data.empty(), "classifier PRM dataset is empty");
  bool pos = false, neg = false;
  for (const auto& e : data) (e.label >= 0.5 ? pos : neg) = true;
  require(pos && neg, "classifier PRM dataset holds a single class");
  const auto prompts = prompts_of(data);
  auto [tr, te] = split_by_prompt(prompts, cfg.heldout_fraction, cfg.seed);
  const auto train = build_groups(model, pick(data, tr));
  const auto test = build_groups(model, pick(data, te));
  PrmTrainReport rep;
  rep.train_size = tr.size();
  rep.heldout_size = te.size();
  rep.epoch_losses = fit(model, train, cfg, [&](std::span<const TokenGroup> b) {
    return classifier_loss_graph(model, b);
  });
  rep.train_metric = classifier_accuracy(model, train);
  rep.heldout_metric = classifier_accuracy(model, test);
  return rep;
}

PrmTrainReport train_bt_reward(RewardModel& model,
                               const std::vector<synth::TextPair>& pairs,
                               const PrmTrainConfig& cfg) {
  require(model.kind() == RewardKind::bradley_terry,
          "train_bt_reward needs a Bradley-Terry model");
  PrmTrainReport rep;
  std::vector<synth::TextPair> kept;
  for (const auto& p : pairs) {
    if (p.chosen == p.rejected) {
      spdlog::warn("skipping BT pair whose chosen and rejected responses match");
      ++rep.skipped;
      continue;
    }
    kept.push_back(p);
  }
  require(!kept.empty(), "BT dataset is empty");
  std::vector<std::string> prompts;
  std::vector<TokenPair> tokens;
  for (const auto& p : kept) {
    prompts.push_back(p.prompt);
    tokens.push_back({model.encode(cfg.tag, p.prompt, p.chosen),
                      model.encode(cfg.tag, p.prompt, p.rejected)});
  }
  auto [tr, te] = split_by_prompt(prompts, cfg.heldout_fraction, cfg.seed);
  const auto train = pick(tokens, tr);
  const auto test = pick(tokens, te);
  rep.train_size = train.size();
  rep.heldout_size = test.size();
  rep.epoch_losses = fit(model, train, cfg, [&](std::span<const TokenPair> b) {
    return bt_loss_graph(model, b);
  });
  rep.train_metric = ranking_accuracy(model, train);
  rep.heldout_metric = ranking_accuracy(model, test);
  return rep;
}

void save_reward_model(const std::filesystem::path& path,
                       const RewardModel& model) {
  policy::Checkpoint c;
  c.kind = "reward";
  c.dims = model.dims();
  c.alphabet = model.tokenizer().alphabet();
  c.meta["reward_kind"] = to_string(model.kind());
  const auto names = model.backbone().parameter_names();
  const auto params = model.backbone().parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    c.arrays.emplace_back(names[i], params[i]);
  c.arrays.emplace_back("head_w", model.head_w());
  c.arrays.emplace_back("pool_w", model.pool_w());
  c.arrays.emplace_back("head_b", model.head_b());
  policy::save_checkpoint(path, c);
}

RewardModel load_reward_model(const std::filesystem::path& path) {
  auto c = policy::load_checkpoint(path);
  if (c.kind != "reward")
    fail(ErrorCode::invalid_argument, "checkpoint " + path.string() + " holds '" +
                                          c.kind + "', not a reward model");
  const std::size_t n_backbone = 4 + 12 * static_cast<std::size_t>(c.dims.layers);
  require(c.arrays.size() == n_backbone + 3,
          "reward checkpoint has an unexpected array count");
  auto it = c.meta.find("reward_kind");
  require(it != c.meta.end(), "reward checkpoint lacks reward_kind");
  std::vector<Tensor> bb;
  for (std::size_t i = 0; i < n_backbone; ++i) bb.push_back(c.arrays[i].second);
  return RewardModel(parse_reward_kind(it->second),
                     Backbone::from_arrays(c.dims, std::move(bb)),
                     c.arrays[n_backbone].second, c.arrays[n_backbone + 1].second,
                     c.arrays[n_backbone + 2].second, Tokenizer(c.alphabet));
}

RewardScorer::RewardScorer(std::shared_ptr<const RewardModel> model,
                           std::string tag)
    : model_(std::move(model)), tag_(std::move(tag)) {
  require(model_ != nullptr, "reward scorer needs a model");
}

double RewardScorer::score(const std::string& prompt, const std::string& prefix,
                           const std::string& candidate) const {
  std::string key = tag_ + prompt + prefix;
  if (key != cached_key_ || cached_state_.count == 0) {
    const auto tokens = model_->encode(tag_, prompt, prefix);
    cached_cache_ = model_->backbone().empty_cache();
    cached_state_ = ReadoutState{};
    for (int t : tokens) cached_state_.push(model_->backbone().step(cached_cache_, t));
    cached_key_ = std::move(key);
  }
  const auto cand = model_->tokenizer().tokenize(candidate);
  const auto limit = static_cast<std::size_t>(model_->dims().max_positions);
  if (cached_cache_.position_count + cand.size() > limit)
    fail(ErrorCode::invalid_argument, "reward model input exceeds max_positions");
  if (cand.empty()) return model_->output(model_->head_readout(cached_state_));
  auto cache = cached_cache_.clone();
  ReadoutState state = cached_state_;
  for (int t : cand) state.push(model_->backbone().step(cache, t));
  return model_->output(model_->head_readout(state));
}

}  // namespace mah::prm
