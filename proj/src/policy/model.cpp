// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "policy/model.hpp"

#include <cmath>

#include "common/rng.hpp"
#include "numcore/kernels.hpp"
#include "numcore/ops.hpp"

namespace mah::policy {

namespace nc = mah::numcore;
namespace k = mah::numcore::kernels;

PolicyModel PolicyModel::create(const ModelDims& dims, Tokenizer tokenizer,
                                std::uint64_t seed) {
  dims.validate();
  require(dims.vocab_size == tokenizer.vocab_size(),
          "dims.vocab_size " + std::to_string(dims.vocab_size) +
              " does not match tokenizer vocabulary " +
              std::to_string(tokenizer.vocab_size()));
  Rng rng(derive_seed(seed, "policy.init"));
  Backbone backbone = Backbone::init(dims, rng);
  const auto d = static_cast<std::size_t>(dims.hidden_dim);
  const auto v = static_cast<std::size_t>(dims.vocab_size);
  std::normal_distribution<double> dist(0.0, 0.02);
  std::vector<double> w(d * v);
  for (auto& x : w) x = dist(rng);
  Tensor ref = Tensor::from({d, v}, w, false);
  std::vector<Tensor> heads;
  for (int i = 0; i < dims.objective_heads; ++i)
    heads.push_back(Tensor::from({d, v}, w, true));
  return PolicyModel(dims, std::move(backbone), std::move(heads), std::move(ref),
                     std::move(tokenizer));
}

PolicyModel::PolicyModel(ModelDims dims, Backbone backbone,
                         std::vector<Tensor> heads, Tensor reference_head,
                         Tokenizer tokenizer)
    : dims_(dims),
      backbone_(std::move(backbone)),
      heads_(std::move(heads)),
      reference_head_(std::move(reference_head)),
      tokenizer_(std::move(tokenizer)) {
  require(!heads_.empty(), "policy model needs at least one head");
  dims_.objective_heads = static_cast<int>(heads_.size());
  const nc::Shape expected{static_cast<std::size_t>(dims_.hidden_dim),
                           static_cast<std::size_t>(dims_.vocab_size)};
  for (const auto& h : heads_)
    if (h.shape() != expected)
      fail(ErrorCode::shape_mismatch, "head shape " + nc::shape_str(h.shape()) +
                                          " differs from reference " +
                                          nc::shape_str(expected));
  if (reference_head_.shape() != expected)
    fail(ErrorCode::shape_mismatch,
         "reference head shape " + nc::shape_str(reference_head_.shape()) +
             ", expected " + nc::shape_str(expected));
  require(!reference_head_.requires_grad(), "reference head must be frozen");
}

PolicyModel PolicyModel::clone() const {
  std::vector<Tensor> heads;
  for (const auto& h : heads_) heads.push_back(h.clone());
  return PolicyModel(dims_, backbone_.clone(), std::move(heads),
                     reference_head_.clone(), tokenizer_);
}

const Tensor& PolicyModel::head(int i) const {
  if (i < 0 || i >= num_heads())
    fail(ErrorCode::invalid_argument, "head index " + std::to_string(i) +
                                          " out of range [0," +
                                          std::to_string(num_heads()) + ")");
  return heads_[static_cast<std::size_t>(i)];
}

std::vector<Tensor> PolicyModel::trainable_parameters() const {
  auto out = backbone_.parameters();
  out.insert(out.end(), heads_.begin(), heads_.end());
  return out;
}

EncodedPrompt encode_prompt(const PolicyModel& model,
                            std::span<const int> prompt) {
  require(!prompt.empty(), "cannot encode an empty prompt");
  const auto limit = static_cast<std::size_t>(model.dims().max_positions);
  if (prompt.size() >= limit)
    fail(ErrorCode::invalid_argument,
         "prompt of " + std::to_string(prompt.size()) +
             " tokens must be shorter than max_positions " +
             std::to_string(limit));
  EncodedPrompt out{model.backbone().empty_cache(), {}};
  for (int tok : prompt) out.hidden = model.backbone().step(out.cache, tok);
  return out;
}

std::vector<double> step_forward(const PolicyModel& model, KvCache& cache,
                                 int token) {
  return model.backbone().step(cache, token);
}

namespace {

std::vector<double> project(const Tensor& w, std::span<const double> hidden) {
  const std::size_t d = w.rows(), v = w.cols();
  require(hidden.size() == d, "hidden state has " +
                                  std::to_string(hidden.size()) +
                                  " entries, head expects " + std::to_string(d));
  std::vector<double> z(v);
  k::vec_mat(hidden.data(), w.values().data(), d, v, z.data());
  return z;
}

}  // namespace

std::vector<double> head_logits(const PolicyModel& model,
                                std::span<const double> hidden, int head) {
  return project(model.head(head), hidden);
}

std::vector<double> reference_logits(const PolicyModel& model,
                                     std::span<const double> hidden) {
  return project(model.reference_head(), hidden);
}

void check_simplex(std::span<const double> w, std::size_t expected_size) {
  if (w.size() != expected_size)
    fail(ErrorCode::invalid_argument,
         "weight vector has " + std::to_string(w.size()) + " entries, expected " +
             std::to_string(expected_size));
  double s = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) fail(ErrorCode::invalid_argument, "negative weight");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9)
    fail(ErrorCode::invalid_argument,
         "weights sum to " + std::to_string(s) + ", not 1");
}

std::vector<double> ensemble_distribution(const PolicyModel& model,
                                          std::span<const double> hidden,
                                          std::span<const double> weights,
                                          EnsembleMode mode) {
  check_simplex(weights, static_cast<std::size_t>(model.num_heads()));
  const auto v = static_cast<std::size_t>(model.dims().vocab_size);
  std::vector<double> out(v, 0.0);
  if (mode == EnsembleMode::logit_average) {
    std::vector<double> z(v, 0.0);
    for (int i = 0; i < model.num_heads(); ++i) {
      const double w = weights[static_cast<std::size_t>(i)];
      if (w == 0.0) continue;
      auto zi = head_logits(model, hidden, i);
      for (std::size_t j = 0; j < v; ++j) z[j] += w * zi[j];
    }
    k::softmax_row(z.data(), v, out.data());
    return out;
  }
  std::vector<double> p(v);
  for (int i = 0; i < model.num_heads(); ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    auto zi = head_logits(model, hidden, i);
    k::softmax_row(zi.data(), v, p.data());
    for (std::size_t j = 0; j < v; ++j) out[j] += w * p[j];
  }
  return out;
}

std::vector<double> next_token_distribution(const PolicyModel& model,
                                            std::span<const double> hidden,
                                            const HeadSource& source) {
  if (source.kind == HeadSource::Kind::ensemble)
    return ensemble_distribution(model, hidden, source.weights, source.mode);
  auto z = source.kind == HeadSource::Kind::reference
               ? reference_logits(model, hidden)
               : head_logits(model, hidden, source.head);
  std::vector<double> p(z.size());
  k::softmax_row(z.data(), z.size(), p.data());
  return p;
}

nc::Tensor sequence_logprob_graph(const PolicyModel& model,
                                  const HeadSource& source,
                                  std::span<const int> prompt,
                                  std::span<const int> response) {
  require(!prompt.empty(), "sequence_logprob needs a non-empty prompt");
  require(!response.empty(), "sequence_logprob needs a non-empty response");
  for (int t : response)
    if (t < 0 || t >= model.dims().vocab_size)
      fail(ErrorCode::invalid_argument,
           "response token " + std::to_string(t) + " outside vocabulary");
  std::vector<int> tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), response.begin(), response.end());
  Tensor hidden = model.backbone().forward(tokens);
  // Row r of the slice predicts response[r].
  Tensor h = nc::slice_rows(hidden, prompt.size() - 1, tokens.size() - 1);
  std::vector<std::size_t> rows(response.size()), cols(response.size());
  for (std::size_t r = 0; r < response.size(); ++r) {
    rows[r] = r;
    cols[r] = static_cast<std::size_t>(response[r]);
  }
  auto picks = [&](const Tensor& logits) {
    return nc::gather(nc::log_softmax(logits), rows, cols);
  };
  switch (source.kind) {
    case HeadSource::Kind::head:
      return nc::sum(picks(nc::matmul(h, model.head(source.head))));
    case HeadSource::Kind::reference:
      return nc::sum(picks(nc::matmul(h, model.reference_head())));
    case HeadSource::Kind::ensemble: {
      check_simplex(source.weights, static_cast<std::size_t>(model.num_heads()));
      if (source.mode == EnsembleMode::logit_average) {
        Tensor z;
        for (int i = 0; i < model.num_heads(); ++i) {
          const double w = source.weights[static_cast<std::size_t>(i)];
          if (w == 0.0) continue;
          Tensor zi = nc::scale(nc::matmul(h, model.head(i)), w);
          z = z.defined() ? nc::add(z, zi) : zi;
        }
        return nc::sum(picks(z));
      }
      std::vector<Tensor> comps;
      std::vector<double> ws;
      for (int i = 0; i < model.num_heads(); ++i) {
        const double w = source.weights[static_cast<std::size_t>(i)];
        if (w == 0.0) continue;
        comps.push_back(picks(nc::matmul(h, model.head(i))));
        ws.push_back(w);
      }
      return nc::sum(nc::log_mixture(comps, ws));
    }
  }
  fail(ErrorCode::contract, "unknown head source");
}

double sequence_logprob(const PolicyModel& model, const HeadSource& source,
                        std::span<const int> prompt,
                        std::span<const int> response) {
  return sequence_logprob_graph(model, source, prompt, response).item();
}

PolicyModel init_heads(const PolicyModel& lm, int num_heads,
                       double perturb_scale, std::uint64_t seed) {
  require(num_heads >= 1, "need at least one objective head");
  require(perturb_scale >= 0.0, "perturbation scale must be non-negative");
  const Tensor& base = lm.head(0);
  Rng rng(derive_seed(seed, "policy.init_heads"));
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<Tensor> heads;
  for (int i = 0; i < num_heads; ++i) {
    std::vector<double> w(base.values().begin(), base.values().end());
    for (auto& x : w) x += perturb_scale * dist(rng);
    heads.push_back(Tensor::from(base.shape(), std::move(w), true));
  }
  ModelDims dims = lm.dims();
  dims.objective_heads = num_heads;
  return PolicyModel(dims, lm.backbone().clone(), std::move(heads),
                     Tensor::from(base.shape(),
                                  std::vector<double>(base.values().begin(),
                                                      base.values().end()),
                                  false),
                     lm.tokenizer());
}

}  // namespace mah::policy
