// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "policy/backbone.hpp"

#include <cmath>

#include "numcore/kernels.hpp"
#include "numcore/ops.hpp"

namespace mah::policy {

namespace nc = mah::numcore;
namespace k = mah::numcore::kernels;

void ModelDims::validate() const {
  require(vocab_size > 0 && hidden_dim > 0 && layers > 0 && attn_heads > 0 &&
              max_positions > 0 && objective_heads > 0,
          "model dims must all be positive");
  require(hidden_dim % attn_heads == 0,
          "hidden_dim " + std::to_string(hidden_dim) +
              " not divisible by attention heads " +
              std::to_string(attn_heads));
}

namespace {

Tensor normal(nc::Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(nc::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::vector<nc::Shape> expected_shapes(const ModelDims& dims) {
  const auto d = static_cast<std::size_t>(dims.hidden_dim);
  std::vector<nc::Shape> out{{static_cast<std::size_t>(dims.vocab_size), d},
                             {static_cast<std::size_t>(dims.max_positions), d}};
  for (int l = 0; l < dims.layers; ++l) {
    out.insert(out.end(), {{d}, {d}, {d, 3 * d}, {3 * d}, {d, d}, {d}, {d}, {d},
                           {d, 4 * d}, {4 * d}, {4 * d, d}, {d}});
  }
  out.push_back({d});
  out.push_back({d});
  return out;
}

Tensor filled(std::size_t n, double value) {
  return Tensor::from({n}, std::vector<double>(n, value), true);
}

}  // namespace

Backbone Backbone::init(const ModelDims& dims, Rng& rng) {
  dims.validate();
  const auto d = static_cast<std::size_t>(dims.hidden_dim);
  const double std_w = 0.02;
  const double std_proj = 0.02 / std::sqrt(2.0 * dims.layers);
  Backbone b;
  b.dims_ = dims;
  b.tok_emb = normal({static_cast<std::size_t>(dims.vocab_size), d}, std_w, rng);
  b.pos_emb =
      normal({static_cast<std::size_t>(dims.max_positions), d}, std_w, rng);
  for (int l = 0; l < dims.layers; ++l) {
    LayerParams p;
    p.ln1_g = filled(d, 1.0);
    p.ln1_b = filled(d, 0.0);
    p.w_qkv = normal({d, 3 * d}, std_w, rng);
    p.b_qkv = filled(3 * d, 0.0);
    p.w_o = normal({d, d}, std_proj, rng);
    p.b_o = filled(d, 0.0);
    p.ln2_g = filled(d, 1.0);
    p.ln2_b = filled(d, 0.0);
    p.w_fc = normal({d, 4 * d}, std_w, rng);
    p.b_fc = filled(4 * d, 0.0);
    p.w_proj = normal({4 * d, d}, std_proj, rng);
    p.b_proj = filled(d, 0.0);
    b.layers.push_back(std::move(p));
  }
  b.lnf_g = filled(d, 1.0);
  b.lnf_b = filled(d, 0.0);
  return b;
}

Tensor Backbone::forward(std::span<const int> tokens) const {
  const std::size_t T = tokens.size();
  require(T > 0, "backbone forward on an empty sequence");
  if (T > static_cast<std::size_t>(dims_.max_positions))
    fail(ErrorCode::invalid_argument,
         "sequence of " + std::to_string(T) + " tokens exceeds max_positions " +
             std::to_string(dims_.max_positions));
  std::vector<int> positions(T);
  for (std::size_t t = 0; t < T; ++t) positions[t] = static_cast<int>(t);
  Tensor x = nc::add(nc::embedding(tok_emb, tokens),
                     nc::embedding(pos_emb, positions));
  for (const auto& p : layers) {
    Tensor h = nc::layer_norm(x, p.ln1_g, p.ln1_b);
    Tensor qkv = nc::add(nc::matmul(h, p.w_qkv), p.b_qkv);
    Tensor att = nc::causal_attention(qkv, static_cast<std::size_t>(dims_.attn_heads));
    x = nc::add(x, nc::add(nc::matmul(att, p.w_o), p.b_o));
    h = nc::layer_norm(x, p.ln2_g, p.ln2_b);
    Tensor f = nc::gelu(nc::add(nc::matmul(h, p.w_fc), p.b_fc));
    x = nc::add(x, nc::add(nc::matmul(f, p.w_proj), p.b_proj));
  }
  return nc::layer_norm(x, lnf_g, lnf_b);
}

KvCache Backbone::empty_cache() const {
  KvCache c;
  c.layers.resize(static_cast<std::size_t>(dims_.layers));
  return c;
}

std::vector<double> Backbone::step(KvCache& cache, int token) const {
  const auto d = static_cast<std::size_t>(dims_.hidden_dim);
  const auto nh = static_cast<std::size_t>(dims_.attn_heads);
  const std::size_t hd = d / nh;
  const std::size_t pos = cache.position_count;
  if (pos + 1 > static_cast<std::size_t>(dims_.max_positions))
    fail(ErrorCode::invalid_argument,
         "cache position " + std::to_string(pos + 1) +
             " exceeds max_positions " + std::to_string(dims_.max_positions));
  if (token < 0 || token >= dims_.vocab_size)
    fail(ErrorCode::invalid_argument,
         "token id " + std::to_string(token) + " outside vocabulary");
  if (cache.layers.size() != layers.size()) cache.layers.resize(layers.size());

  std::vector<double> x(d), h(d), xh(d), qkv(3 * d), att(d), o(d), f(4 * d),
      g(d);
  const double* te = tok_emb.values().data() + static_cast<std::size_t>(token) * d;
  const double* pe = pos_emb.values().data() + pos * d;
  for (std::size_t j = 0; j < d; ++j) x[j] = te[j];
  k::add_in_place(x.data(), pe, d);

  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> probs(pos + 1);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& p = layers[l];
    auto& kv = cache.layers[l];
    k::layer_norm_row(x.data(), p.ln1_g.values().data(), p.ln1_b.values().data(),
                      d, xh.data(), h.data());
    k::vec_mat(h.data(), p.w_qkv.values().data(), d, 3 * d, qkv.data());
    k::add_in_place(qkv.data(), p.b_qkv.values().data(), 3 * d);
    kv.keys.insert(kv.keys.end(), qkv.begin() + d, qkv.begin() + 2 * d);
    kv.values.insert(kv.values.end(), qkv.begin() + 2 * d, qkv.end());
    for (std::size_t hh = 0; hh < nh; ++hh)
      k::attend(qkv.data() + hh * hd, kv.keys.data() + hh * hd,
                kv.values.data() + hh * hd, d, pos + 1, hd, sc, probs.data(),
                att.data() + hh * hd);
    k::vec_mat(att.data(), p.w_o.values().data(), d, d, o.data());
    k::add_in_place(o.data(), p.b_o.values().data(), d);
    k::add_in_place(x.data(), o.data(), d);
    k::layer_norm_row(x.data(), p.ln2_g.values().data(), p.ln2_b.values().data(),
                      d, xh.data(), h.data());
    k::vec_mat(h.data(), p.w_fc.values().data(), d, 4 * d, f.data());
    k::add_in_place(f.data(), p.b_fc.values().data(), 4 * d);
    for (auto& v : f) v = k::gelu(v);
    k::vec_mat(f.data(), p.w_proj.values().data(), 4 * d, d, o.data());
    k::add_in_place(o.data(), p.b_proj.values().data(), d);
    k::add_in_place(x.data(), o.data(), d);
  }
  ++cache.position_count;
  k::layer_norm_row(x.data(), lnf_g.values().data(), lnf_b.values().data(), d,
                    xh.data(), g.data());
  return g;
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> out{tok_emb, pos_emb};
  for (const auto& p : layers) {
    out.insert(out.end(), {p.ln1_g, p.ln1_b, p.w_qkv, p.b_qkv, p.w_o, p.b_o,
                           p.ln2_g, p.ln2_b, p.w_fc, p.b_fc, p.w_proj,
                           p.b_proj});
  }
  out.push_back(lnf_g);
  out.push_back(lnf_b);
  return out;
}

std::vector<std::string> Backbone::parameter_names() const {
  std::vector<std::string> out{"tok_emb", "pos_emb"};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    for (const char* n : {"ln1_g", "ln1_b", "w_qkv", "b_qkv", "w_o", "b_o",
                          "ln2_g", "ln2_b", "w_fc", "b_fc", "w_proj", "b_proj"})
      out.push_back(pre + n);
  }
  out.push_back("lnf_g");
  out.push_back("lnf_b");
  return out;
}

Backbone Backbone::from_arrays(const ModelDims& dims, std::vector<Tensor> a) {
  dims.validate();
  const std::size_t expected = 4 + 12 * static_cast<std::size_t>(dims.layers);
  require(a.size() == expected, "backbone needs " + std::to_string(expected) +
                                    " arrays, got " + std::to_string(a.size()));
  const auto shapes = expected_shapes(dims);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != shapes[i])
      fail(ErrorCode::shape_mismatch,
           "backbone array " + std::to_string(i) + " has shape " +
               nc::shape_str(a[i].shape()) + ", expected " +
               nc::shape_str(shapes[i]));
  }
  Backbone b;
  b.dims_ = dims;
  std::size_t i = 0;
  b.tok_emb = a[i++];
  b.pos_emb = a[i++];
  for (int l = 0; l < dims.layers; ++l) {
    LayerParams p;
    p.ln1_g = a[i++];
    p.ln1_b = a[i++];
    p.w_qkv = a[i++];
    p.b_qkv = a[i++];
    p.w_o = a[i++];
    p.b_o = a[i++];
    p.ln2_g = a[i++];
    p.ln2_b = a[i++];
    p.w_fc = a[i++];
    p.b_fc = a[i++];
    p.w_proj = a[i++];
    p.b_proj = a[i++];
    b.layers.push_back(std::move(p));
  }
  b.lnf_g = a[i++];
  b.lnf_b = a[i++];
  return b;
}

Backbone Backbone::clone() const {
  std::vector<Tensor> copies;
  for (const auto& p : parameters()) copies.push_back(p.clone());
  return from_arrays(dims_, std::move(copies));
}

}  // namespace mah::policy
