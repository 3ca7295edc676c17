// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <spdlog/fmt/fmt.h>

#include "common/error.hpp"
#include "decode/decode.hpp"

namespace mah::harness {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  fail(ErrorCode::invalid_argument,
       "config key '" + key + "': '" + value + "' is not " + expected);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    bad_value(key, v, "a non-negative integer");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    bad_value(key, v, "an integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() ||
      !std::isfinite(out))
    bad_value(key, v, "a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

struct Entry {
  const char* key;
  const char* doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define MAH_U64(name, field, doc)                                            \
  Entry {                                                                    \
    name, doc, [](const RunConfig& c) { return std::to_string(c.field); },   \
        [](RunConfig& c, const std::string& v) {                             \
          c.field = static_cast<decltype(c.field)>(to_u64(name, v));         \
        }                                                                    \
  }
#define MAH_INT(name, field, doc)                                            \
  Entry {                                                                    \
    name, doc, [](const RunConfig& c) { return std::to_string(c.field); },   \
        [](RunConfig& c, const std::string& v) { c.field = to_int(name, v); } \
  }
#define MAH_DBL(name, field, doc)                                          \
  Entry {                                                                  \
    name, doc, [](const RunConfig& c) { return fmt_double(c.field); },     \
        [](RunConfig& c, const std::string& v) {                           \
          c.field = to_double(name, v);                                    \
        }                                                                  \
  }
#define MAH_BOOL(name, field, doc)                                             \
  Entry {                                                                      \
    name, doc,                                                                 \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.field = to_bool(name, v); } \
  }
#define MAH_STR(name, field, doc)                                  \
  Entry {                                                          \
    name, doc, [](const RunConfig& c) { return c.field; },         \
        [](RunConfig& c, const std::string& v) { c.field = v; }    \
  }
#define MAH_LIST(name, field, doc)                                          \
  Entry {                                                                   \
    name, doc,                                                              \
        [](const RunConfig& c) { return format_double_list(c.field); },     \
        [](RunConfig& c, const std::string& v) {                            \
          c.field = parse_double_list(v);                                   \
        }                                                                   \
  }

const std::vector<Entry>& table() {
  static const std::vector<Entry> t = {
      MAH_U64("run.seed", seed, "master seed; phase seeds derive from it"),
      MAH_STR("run.out", out, "run directory"),
      MAH_U64("task.sft_problems", sft_problems, "problems in the SFT corpus"),
      MAH_DBL("task.sft_error_rate", sft_error_rate,
              "per-line error probability in SFT solutions"),
      MAH_DBL("task.marked_fraction", marked_fraction,
              "fraction of SFT solutions carrying style markers"),
      MAH_DBL("task.style_threshold", style_threshold, "style judge threshold"),
      MAH_INT("model.hidden_dim", hidden_dim, "backbone width d"),
      MAH_INT("model.layers", layers, "transformer layers"),
      MAH_INT("model.attn_heads", attn_heads, "attention heads"),
      MAH_INT("model.max_positions", max_positions, "position table size"),
      MAH_U64("sft.epochs", sft_epochs, "SFT epochs"),
      MAH_DBL("sft.lr", sft_lr, "SFT learning rate"),
      MAH_U64("sft.batch_size", sft_batch_size, "SFT sequences per step"),
      MAH_U64("label.problems", label_problems,
              "problems sampled for step-value labels"),
      MAH_DBL("label.gamma", label_gamma, "hindsight discount"),
      MAH_U64("label.rollouts", label_rollouts, "rollouts per step (M)"),
      MAH_U64("label.max_steps", label_max_steps, "rollout step cap"),
      MAH_U64("label.pair_problems", pair_problems,
              "problems sampled for preference pairs"),
      MAH_U64("label.pair_rollouts", pair_rollouts, "rollouts per pair problem"),
      MAH_U64("prm.epochs", prm_epochs, "reward model epochs"),
      MAH_DBL("prm.lr", prm_lr, "reward model learning rate"),
      MAH_U64("prm.batch_size", prm_batch_size, "reward model sequences per step"),
      MAH_DBL("prm.heldout_fraction", prm_heldout_fraction,
              "fraction of prompts held out"),
      MAH_BOOL("prm.unified", prm_unified,
               "pool value and style labels into one tagged value PRM"),
      MAH_DBL("dpo.beta", dpo_beta, "DPO temperature"),
      MAH_DBL("dpo.lr", dpo_lr, "MAH-DPO learning rate"),
      MAH_U64("dpo.epochs", dpo_epochs, "MAH-DPO epochs"),
      MAH_U64("dpo.batch_size", dpo_batch_size, "pairs per step"),
      MAH_BOOL("dpo.balanced", dpo_balanced, "balanced per-objective batching"),
      MAH_DBL("dpo.perturb_scale", dpo_perturb_scale, "head perturbation scale"),
      MAH_LIST("dpo.alpha", dpo_alpha, "objective weights; empty = uniform"),
      MAH_DBL("dpo.heldout_fraction", dpo_heldout_fraction,
              "fraction of pair prompts held out"),
      MAH_U64("decode.k", decode_k, "candidates per step"),
      MAH_U64("decode.max_tokens", decode_max_tokens, "total token budget"),
      MAH_U64("decode.chunk_cap", decode_chunk_cap, "per-step token cap"),
      MAH_STR("decode.mode", decode_mode, "cache-carry or re-encode"),
      MAH_DBL("decode.temperature", decode_temperature, "sampling temperature"),
      MAH_DBL("decode.top_p", decode_top_p, "nucleus mass"),
      MAH_INT("decode.top_k", decode_top_k, "top-k cutoff"),
      MAH_STR("decode.guidance", decode_guidance,
              "scorer:weight list over oracle,value,classifier,bt or none"),
      MAH_LIST("decode.weights", decode_weights,
               "head mixture weights; empty = uniform"),
      MAH_U64("decode.problems", decode_problems, "problems decoded"),
      MAH_STR("decode.boundary", decode_boundary,
              "step boundary: separator or fixed:N"),
      MAH_BOOL("decode.allow_eos", decode_allow_eos,
               "allow EOS during decode (false pins step lengths)"),
      MAH_U64("eval.problems", eval_problems, "problems per guided eval"),
      MAH_U64("eval.seeds", eval_seeds, "evaluation seeds"),
      MAH_U64("eval.k", eval_k, "candidates for guided eval"),
      MAH_U64("eval.sweep_problems", eval_sweep_problems,
              "problems per weight-sweep point"),
      MAH_U64("eval.learned_problems", eval_learned_problems,
              "problems for learned-PRM guided eval"),
  };
  return t;
}

#undef MAH_U64
#undef MAH_INT
#undef MAH_DBL
#undef MAH_BOOL
#undef MAH_STR
#undef MAH_LIST

const Entry& entry(const std::string& key) {
  for (const auto& e : table())
    if (key == e.key) return e;
  fail(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
}

}  // namespace

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  const std::string t = trim(text);
  if (t.empty()) return out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double("list", trim(item)));
  return out;
}

std::string format_double_list(const std::vector<double>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ',';
    s += fmt_double(values[i]);
  }
  return s;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  entry(key).set(*this, trim(value));
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::invalid_argument,
           "config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    if (!seen.insert(key).second)
      fail(ErrorCode::invalid_argument, "config line " + std::to_string(lineno) +
                                            ": duplicate key '" + key + "'");
    try {
      c.set(key, t.substr(eq + 1));
    } catch (const Error& e) {
      fail(e.code(), "config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& e : table()) s += std::string(e.key) + "=" + e.get(*this) + "\n";
  return s;
}

void RunConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write config " + path.string());
  out << to_text();
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& e : table()) out.emplace_back(e.key);
  return out;
}

std::string RunConfig::describe(const std::string& key) { return entry(key).doc; }

void RunConfig::validate() const {
  require(!out.empty(), "run.out must not be empty");
  require(sft_problems >= 1 && label_problems >= 1 && pair_problems >= 1,
          "problem counts must be at least 1");
  require(sft_error_rate >= 0.0 && sft_error_rate <= 1.0,
          "task.sft_error_rate must lie in [0, 1]");
  require(marked_fraction >= 0.0 && marked_fraction <= 1.0,
          "task.marked_fraction must lie in [0, 1]");
  require(style_threshold > 0.0 && style_threshold <= 1.0,
          "task.style_threshold must lie in (0, 1]");
  require(hidden_dim >= 1 && layers >= 1 && attn_heads >= 1 &&
              hidden_dim % attn_heads == 0,
          "model dims must be positive with hidden_dim divisible by attn_heads");
  require(max_positions >= 32, "model.max_positions must be at least 32");
  require(label_gamma > 0.0 && label_gamma < 1.0, "label.gamma must lie in (0, 1)");
  require(label_rollouts >= 1 && label_max_steps >= 1, "label.rollouts >= 1");
  require(pair_rollouts >= 2, "label.pair_rollouts must be at least 2");
  require(prm_heldout_fraction >= 0.0 && prm_heldout_fraction < 1.0,
          "prm.heldout_fraction must lie in [0, 1)");
  require(dpo_heldout_fraction >= 0.0 && dpo_heldout_fraction < 1.0,
          "dpo.heldout_fraction must lie in [0, 1)");
  require(dpo_beta > 0.0, "dpo.beta must be positive");
  require(sft_batch_size >= 1 && prm_batch_size >= 1 && dpo_batch_size >= 1,
          "batch sizes must be at least 1");
  require(decode_k >= 1 && eval_k >= 1, "K must be at least 1");
  require(decode_chunk_cap >= 1 && decode_max_tokens >= decode_chunk_cap,
          "need decode.max_tokens >= decode.chunk_cap >= 1");
  require(decode_temperature > 0.0, "decode.temperature must be positive");
  require(decode_top_p > 0.0 && decode_top_p <= 1.0, "decode.top_p in (0, 1]");
  require(decode_top_k >= 1, "decode.top_k must be at least 1");
  decode::parse_mode(decode_mode);
  if (decode_boundary != "separator") {
    require(decode_boundary.rfind("fixed:", 0) == 0,
            "decode.boundary must be separator or fixed:N");
    const auto n = decode_boundary.substr(6);
    std::size_t len = 0;
    auto [p, ec] = std::from_chars(n.data(), n.data() + n.size(), len);
    require(ec == std::errc() && p == n.data() + n.size() && len >= 1,
            "decode.boundary fixed length must be a positive integer");
  }
  require(eval_seeds >= 1 && eval_problems >= 1, "eval set must not be empty");
}

}  // namespace mah::harness
