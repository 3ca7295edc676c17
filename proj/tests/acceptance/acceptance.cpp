// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance suite. Runs the full pipeline with the default
// configuration, checks every criterion against it plus a set of direct
// model-level probes, and prints one PASS/FAIL line per criterion.
//
//   mahalign_acceptance [--work DIR] [--run-dir DIR]
//
// --run-dir evaluates an existing completed run instead of producing one.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <zlib.h>

#include "common/error.hpp"
#include "common/log.hpp"
#include "common/rng.hpp"
#include "decode/decode.hpp"
#include "harness/config.hpp"
#include "harness/metrics.hpp"
#include "harness/phases.hpp"
#include "harness/tasks.hpp"
#include "mahdpo/mahdpo.hpp"
#include "policy/model.hpp"
#include "prmlab/labels.hpp"
#include "synthtasks/arithmetic.hpp"

namespace fs = std::filesystem;
using namespace mah;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

policy::ModelDims small_dims(int heads = 1) {
  policy::ModelDims d;
  d.vocab_size = policy::Tokenizer().vocab_size();
  d.hidden_dim = 16;
  d.layers = 2;
  d.attn_heads = 2;
  d.max_positions = 96;
  d.objective_heads = heads;
  return d;
}

// ---- run-level metrics -------------------------------------------------------

class RunMetrics {
 public:
  explicit RunMetrics(const fs::path& dir) {
    for (const auto& r : harness::read_metrics(dir / "metrics.csv"))
      values_[r.phase + "/" + r.metric] = r.value;
    std::ifstream t(dir / "timings.csv");
    std::string line;
    std::getline(t, line);
    while (std::getline(t, line)) {
      const auto a = line.find(',');
      const auto b = line.find(',', a + 1);
      if (a == std::string::npos || b == std::string::npos) continue;
      timings_[line.substr(a + 1, b - a - 1)] = std::stod(line.substr(b + 1));
    }
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  double get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorCode::io, "metric " + key + " missing");
    return it->second;
  }
  double seconds(const std::string& phase) const {
    const auto it = timings_.find(phase);
    if (it == timings_.end()) fail(ErrorCode::io, "timing for " + phase + " missing");
    return it->second;
  }

 private:
  std::map<std::string, double> values_;
  std::map<std::string, double> timings_;
};

std::uint32_t file_crc(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

// ---- 1, 2: gradients -----------------------------------------------------------

Outcome check_gradients(const harness::GradcheckSummary& g) {
  Outcome o;
  o.pass = g.seconds < 60.0 && !g.entries.empty();
  std::string parts;
  for (const auto& e : g.entries) {
    o.pass = o.pass && e.max_rel_error < 1e-4;
    parts += fmt::format("{}={:.2e} ", e.loss, e.max_rel_error);
  }
  o.detail = fmt::format("{}runtime={:.1f}s", parts, g.seconds);
  return o;
}

Outcome check_isolation(const harness::GradcheckSummary& g) {
  Outcome o;
  o.pass = !g.isolation.empty();
  std::size_t zeros = 0;
  for (std::size_t j = 0; j < g.isolation.size(); ++j)
    for (std::size_t b = 0; b < g.isolation[j].size(); ++b)
      if (j != b) {
        o.pass = o.pass && g.isolation[j][b] == 0.0;
        zeros += g.isolation[j][b] == 0.0 ? 1 : 0;
      }
  o.pass = o.pass && g.additivity_error <= 1e-10;
  o.detail = fmt::format("exact zero off-objective head grads={} additivity error={:.2e}",
                         zeros, g.additivity_error);
  return o;
}

// ---- 3: DPO zero point ---------------------------------------------------------

Outcome check_dpo_zero_point() {
  policy::Tokenizer tok;
  const auto lm = policy::PolicyModel::create(small_dims(), tok, 11);
  auto model = policy::init_heads(lm, 2, 0.0, 12);
  const auto reference = model.clone();
  const auto objectives = dpo::make_objective_map({"accuracy", "style"});
  const auto problems = synth::gen_problems(13, 4);
  std::vector<dpo::PreferencePair> pairs;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& p = problems[i];
    std::mt19937_64 rng(i);
    const std::string right = synth::render_solution(p, false);
    const std::string wrong = synth::render_noisy_solution(p, false, 1.0, rng);
    pairs.push_back(dpo::encode_pair(
        tok, i % 2 ? synth::TextPair{p.prompt(), synth::render_solution(p, true), right, "style"}
                   : synth::TextPair{p.prompt(), right, wrong, "accuracy"},
        objectives));
  }
  double worst = 0.0;
  for (const auto& pair : pairs) {
    const auto l = dpo::dpo_pair_loss(model, policy::HeadSource::of_head(pair.objective),
                                      reference, pair, 0.1);
    worst = std::max(worst, std::abs(l.loss.item() - std::log(2.0)));
  }
  dpo::TrainConfig cfg;
  cfg.adam.lr = 1e-3;
  numcore::Adam opt(model.trainable_parameters(), cfg.adam);
  const auto batch = dpo::route_batch(pairs, 2);
  dpo::train_step(model, reference, opt, batch, cfg);
  double min_delta = INFINITY;
  for (const auto& pair : pairs)
    min_delta = std::min(min_delta, dpo::dpo_pair_loss(model, policy::HeadSource::of_head(
                                                                  pair.objective),
                                                       reference, pair, 0.1)
                                        .delta);
  Outcome o;
  o.pass = worst <= 1e-9 && min_delta > 0.0;
  o.detail = fmt::format("max |loss - ln2|={:.2e} min delta after one step={:.3e}", worst,
                         min_delta);
  return o;
}

// ---- 4: hindsight targets ------------------------------------------------------

// Independent arithmetic checker: returns 1 for a correctly chained step.
struct ParsedLine {
  bool answer = false;
  long a = 0, b = 0, c = 0;
  char op = 0;
  bool ok = false;
};

ParsedLine parse_line(const std::string& raw) {
  ParsedLine out;
  std::string s = raw;
  while (!s.empty() && (s.back() == '\n' || s.back() == '*')) s.pop_back();
  if (s.rfind("ANS ", 0) == 0) {
    out.answer = true;
    try {
      std::size_t used = 0;
      out.c = std::stol(s.substr(4), &used);
      out.ok = used == s.size() - 4;
    } catch (...) {
      out.ok = false;
    }
    return out;
  }
  if (std::sscanf(s.c_str(), "%ld%c%ld=%ld", &out.a, &out.op, &out.b, &out.c) == 4 &&
      (out.op == '+' || out.op == '-'))
    out.ok = s == fmt::format("{}{}{}={}", out.a, out.op, out.b, out.c);
  return out;
}

double brute_hindsight(const synth::ArithmeticProblem& p, const std::vector<std::string>& steps,
                       std::size_t t, const prm::Continuation& cont,
                       const prm::PrmLabelConfig& cfg) {
  std::vector<long> running = {p.operands[0]};
  for (std::size_t i = 0; i < p.ops.size(); ++i)
    running.push_back(p.ops[i] == '+' ? running.back() + p.operands[i + 1]
                                      : running.back() - p.operands[i + 1]);
  auto reward = [&](std::size_t idx, const std::string& line) -> double {
    const auto e = parse_line(line);
    if (!e.ok) return 0.0;
    if (e.answer) return e.c == running.back() ? 1.0 : 0.0;
    if (idx >= p.ops.size()) return 0.0;
    const long want = p.ops[idx] == '+' ? e.a + e.b : e.a - e.b;
    return e.a == running[idx] && e.op == p.ops[idx] && e.b == p.operands[idx + 1] &&
                   e.c == want
               ? 1.0
               : 0.0;
  };
  const double r = reward(t, steps[t]);
  if (parse_line(steps[t]).answer) {
    const double z = r;
    return r + z;
  }
  std::string prefix;
  for (std::size_t i = 0; i <= t; ++i) prefix += steps[i];
  double total = 0.0;
  for (std::size_t m = 0; m < cfg.rollouts; ++m) {
    std::size_t count = t + 1;
    int z = 0;
    if (count < cfg.max_steps) {
      const auto text = cont(p.prompt(), prefix, derive_seed(cfg.seed, {t, m}));
      std::istringstream lines(text);
      std::string line;
      while (std::getline(lines, line)) {
        ++count;
        const auto e = parse_line(line + "\n");
        if (e.answer) {
          z = e.ok && e.c == running.back() ? 1 : 0;
          break;
        }
        if (count >= cfg.max_steps) break;
      }
    }
    total += r + std::pow(cfg.gamma, static_cast<double>(count - 1 - t)) * z;
  }
  return total / static_cast<double>(cfg.rollouts);
}

Outcome check_hindsight() {
  const auto problems = synth::gen_problems(21, 60);
  // Scripted rollout policy: a noisy worked solution continued past the prefix.
  prm::Continuation cont = [](const std::string& prompt, const std::string& prefix,
                              std::uint64_t stream) {
    const auto p = *synth::parse_prompt(prompt);
    std::mt19937_64 rng(stream);
    const auto lines = synth::split_steps(synth::render_noisy_solution(p, false, 0.25, rng));
    const std::size_t done = synth::split_steps(prefix).size();
    std::string out;
    for (std::size_t i = done; i < lines.size(); ++i) out += lines[i];
    return out;
  };
  std::size_t checked = 0, mismatches = 0, out_of_range = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& p = problems[i];
    std::mt19937_64 rng(1000 + i);
    prm::StepTrajectory traj;
    traj.prompt = p.prompt();
    traj.steps = synth::split_steps(synth::render_noisy_solution(p, i % 3 == 0, 0.2, rng));
    for (std::size_t max_steps : {3u, 20u}) {
      prm::PrmLabelConfig cfg;
      cfg.seed = derive_seed(77, {i});
      cfg.rollouts = 4 + i % 5;
      cfg.max_steps = max_steps;
      cfg.gamma = 0.9;
      const auto targets = prm::hindsight_targets(traj, cont, harness::arithmetic_task(p), cfg);
      for (const auto& vt : targets) {
        ++checked;
        if (vt.target != brute_hindsight(p, traj.steps, vt.step, cont, cfg)) ++mismatches;
        if (!(vt.target >= 0.0 && vt.target <= 2.0)) ++out_of_range;
      }
    }
  }
  std::size_t patterns = 0, vote_mismatches = 0;
  for (std::size_t m = 1; m <= 8; ++m)
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      std::vector<int> votes(m);
      std::size_t positive = 0;
      for (std::size_t k = 0; k < m; ++k) positive += (votes[k] = (mask >> k) & 1u);
      const int expected = 2 * positive > m ? 1 : 0;
      const std::uint64_t seed = derive_seed(5, {m, mask});
      prm::Continuation rollout = [&](const std::string&, const std::string&,
                                      std::uint64_t s) {
        for (std::size_t k = 0; k < m; ++k)
          if (derive_seed(seed, {k}) == s) return std::string(votes[k] ? "+" : "-");
        return std::string("?");
      };
      prm::Judge judge = [](const std::string&, const std::string& r) {
        return r.back() == '+' ? 1 : 0;
      };
      ++patterns;
      if (prm::majority_indicator(votes) != expected ||
          prm::majority_vote_label("x", "", rollout, judge, m, seed) != expected)
        ++vote_mismatches;
    }
  Outcome o;
  o.pass = checked > 0 && mismatches == 0 && out_of_range == 0 && vote_mismatches == 0;
  o.detail = fmt::format("targets={} mismatches={} out of [0,2]={} vote patterns={} mismatches={}",
                         checked, mismatches, out_of_range, patterns, vote_mismatches);
  return o;
}

// ---- 5, 6: incremental decoding ------------------------------------------------

decode::DecodeConfig decode_cfg(std::uint64_t seed, std::size_t k) {
  decode::DecodeConfig cfg;
  cfg.k = k;
  cfg.max_tokens = 48;
  cfg.boundary = decode::BoundaryCriteria::at_separator(policy::Tokenizer().separator(), 12);
  cfg.seed = seed;
  return cfg;
}

Outcome check_incremental() {
  double worst = 0.0;
  for (std::uint64_t seed : {1u, 2u}) {
    const auto model = policy::PolicyModel::create(small_dims(), policy::Tokenizer(), seed);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> id(0, model.dims().vocab_size - 1);
    for (std::size_t len = 1; len <= 64; ++len) {
      std::vector<int> seq(len);
      for (auto& t : seq) t = id(rng);
      const auto full = model.backbone().forward(seq);
      auto cache = model.backbone().empty_cache();
      const auto d = static_cast<std::size_t>(model.dims().hidden_dim);
      for (std::size_t p = 0; p < len; ++p) {
        const auto h = model.backbone().step(cache, seq[p]);
        for (std::size_t j = 0; j < d; ++j)
          worst = std::max(worst, std::abs(h[j] - full.values()[p * d + j]));
      }
    }
  }
  const auto model = policy::PolicyModel::create(small_dims(), policy::Tokenizer(), 3);
  harness::OracleScorer oracle;
  std::size_t runs = 0, identical = 0;
  for (const auto& p : synth::gen_problems(31, 20)) {
    const auto prompt = model.tokenizer().encode_prompt(p.prompt());
    auto cfg = decode_cfg(runs, 1);
    const auto guided = decode::guided_decode(model, &oracle, prompt, cfg);
    const auto plain = decode::sample_plain(model, prompt, cfg);
    ++runs;
    identical += guided.response == plain.response ? 1 : 0;
  }
  Outcome o;
  o.pass = worst <= 1e-12 && identical == runs;
  o.detail = fmt::format("max |incremental - full|={:.2e} over lengths 1-64; K=1 identical {}/{}",
                         worst, identical, runs);
  return o;
}

Outcome check_cost(const fs::path& run_dir) {
  const auto model = policy::init_heads(
      policy::PolicyModel::create(small_dims(), policy::Tokenizer(), 4), 2, 0.05, 5);
  harness::OracleScorer oracle;
  std::size_t runs = 0, identical = 0;
  for (const auto& p : synth::gen_problems(41, 20)) {
    const auto prompt = model.tokenizer().encode_prompt(p.prompt());
    auto cfg = decode_cfg(100 + runs, 5);
    cfg.source = policy::HeadSource::ensemble({0.4, 0.6});
    const auto a = decode::guided_decode(model, &oracle, prompt, cfg);
    const auto b = decode::reencode_decode(model, &oracle, prompt, cfg);
    ++runs;
    identical += (a.response == b.response && a.selected == b.selected && a.scores == b.scores)
                     ? 1
                     : 0;
  }
  std::size_t fixed_runs = 0, fixed_ok = 0;
  for (std::size_t L : {1u, 3u, 6u, 12u}) {
    for (const auto& p : synth::gen_problems(43 + L, 3)) {
      const auto prompt = model.tokenizer().encode_prompt(p.prompt());
      auto cfg = decode_cfg(L, 5);
      cfg.boundary = decode::BoundaryCriteria::fixed(L);
      cfg.max_tokens = 36;
      cfg.sampling.allow_eos = false;
      const auto a = decode::guided_decode(model, nullptr, prompt, cfg);
      const auto b = decode::reencode_decode(model, nullptr, prompt, cfg);
      const auto est = decode::cost_estimate(prompt.size(), cfg.max_tokens / L, cfg.k, L);
      ++fixed_runs;
      fixed_ok += (a.ledger.token_forwards == est.cache_carry &&
                   b.ledger.token_forwards == est.re_encode && a.response == b.response)
                      ? 1
                      : 0;
    }
  }
  const auto ref = decode::cost_estimate(100, 10, 5, 20);
  const auto report = harness::run_cost_report(run_dir / "decode");
  Outcome o;
  o.pass = identical == runs && fixed_ok == fixed_runs && ref.cache_carry == 1100 &&
           ref.re_encode == 10500 && report.passed;
  o.detail = fmt::format(
      "modes identical {}/{}; fixed-length ledgers match {}/{}; (100,10,5,20)->{}/{}; "
      "pipeline cost report {} (ratio {:.2f})",
      identical, runs, fixed_ok, fixed_runs, ref.cache_carry, ref.re_encode,
      report.passed ? "matches" : "MISMATCH", report.ratio);
  return o;
}

// ---- 7-10: pipeline metrics ----------------------------------------------------

Outcome check_lift(const RunMetrics& m, const harness::RunConfig& cfg) {
  const double k1 = m.get("eval/sft.k1.accuracy.mean");
  const double kk = m.get("eval/sft.oracle_k.accuracy.mean");
  const double secs = m.seconds("sft") + m.seconds("eval");
  Outcome o;
  o.pass = cfg.eval_problems == 500 && cfg.eval_seeds == 3 && cfg.eval_k == 5 &&
           kk - k1 >= 0.10 && secs < 600.0;
  o.detail = fmt::format("K=1 {:.3f} vs oracle K=5 {:.3f} (lift {:+.3f}) on {} problems x {} "
                         "seeds; sft+eval {:.0f}s",
                         k1, kk, kk - k1, cfg.eval_problems, cfg.eval_seeds, secs);
  return o;
}

Outcome check_heads(const RunMetrics& m) {
  const std::vector<std::string> names = {"accuracy", "style"};
  Outcome o;
  o.pass = true;
  for (std::size_t h = 0; h < names.size(); ++h) {
    const double own = m.get(fmt::format("train-mahdpo/heldout_acc_head{}_{}", h, names[h]));
    const double ens = m.get(fmt::format("train-mahdpo/heldout_acc_ensemble_{}", names[h]));
    o.pass = o.pass && own >= 0.9 && ens >= own - 0.05;
    o.detail += fmt::format("head{}({}) {:.3f} ensemble {:.3f}; ", h, names[h], own, ens);
  }
  const double secs = m.seconds("train-mahdpo");
  o.pass = o.pass && secs < 900.0;
  o.detail += fmt::format("train {:.0f}s", secs);
  return o;
}

Outcome check_sweep(const RunMetrics& m) {
  const double style_acc = m.get("eval/sweep0.style_rate.mean");
  const double style_sty = m.get("eval/sweep4.style_rate.mean");
  const double acc_acc = m.get("eval/sweep0.accuracy.mean");
  const double acc_sty = m.get("eval/sweep4.accuracy.mean");
  Outcome o;
  o.pass = style_sty > style_acc && acc_acc > acc_sty;
  o.detail = fmt::format("style (1,0)={:.3f} (0,1)={:.3f}; accuracy (1,0)={:.3f} (0,1)={:.3f}",
                         style_acc, style_sty, acc_acc, acc_sty);
  return o;
}

Outcome check_prm(const RunMetrics& m) {
  const double mse = m.get("train-prm/value_heldout_mse");
  const double bt = m.get("train-prm/bt_heldout_ranking_accuracy");
  Outcome o;
  o.pass = mse <= 0.05 && bt >= 0.9;
  o.detail = fmt::format("value held-out MSE {:.4f}; BT held-out ranking {:.3f}", mse, bt);
  return o;
}

// ---- 11: reproducibility --------------------------------------------------------

harness::RunConfig small_config(const fs::path& out) {
  harness::RunConfig c;
  c.out = out.string();
  c.sft_problems = 200;
  c.sft_epochs = 1;
  c.label_problems = 12;
  c.label_rollouts = 2;
  c.pair_problems = 30;
  c.prm_epochs = 1;
  c.dpo_epochs = 1;
  c.decode_problems = 4;
  c.eval_problems = 10;
  c.eval_seeds = 2;
  c.eval_sweep_problems = 6;
  c.eval_learned_problems = 4;
  return c;
}

Outcome check_reproducible(const fs::path& work) {
  const auto dir = work / "repro";
  fs::remove_all(dir);
  const auto cfg = small_config(dir);
  harness::run_pipeline(cfg);
  const auto first = file_crc(dir / "metrics.csv");
  harness::run_pipeline(cfg);
  const auto second = file_crc(dir / "metrics.csv");
  Outcome o;
  o.pass = first == second && fs::file_size(dir / "metrics.csv") > 0;
  o.detail = fmt::format("metrics crc32 {:08x} then {:08x}", first, second);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  fs::path work = fs::current_path() / "acceptance_work";
  fs::path run_dir;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--work" || a == "--run-dir") && i + 1 < argc) {
      (a == "--work" ? work : run_dir) = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--run-dir DIR]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);

  std::vector<std::pair<std::string, Outcome>> results;
  auto run = [&](const std::string& name, auto&& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(name, o);
  };

  harness::RunConfig cfg;
  if (run_dir.empty()) {
    run_dir = work / "default";
    fs::remove_all(run_dir);
    cfg.out = run_dir.string();
    const auto t0 = Clock::now();
    try {
      harness::run_pipeline(cfg);
      std::printf("pipeline finished in %.0fs\n", seconds_since(t0));
    } catch (const std::exception& e) {
      std::printf("pipeline failed: %s\n", e.what());
    }
  } else {
    try {
      cfg = harness::RunConfig::load(run_dir / "config.txt");
    } catch (const std::exception& e) {
      std::printf("cannot read run config: %s\n", e.what());
    }
  }

  harness::GradcheckSummary grad;
  try {
    grad = harness::run_gradcheck(1);
  } catch (const std::exception& e) {
    std::printf("gradcheck failed: %s\n", e.what());
  }
  run("C1 gradient correctness", [&] { return check_gradients(grad); });
  run("C2 head isolation and additivity", [&] { return check_isolation(grad); });
  run("C3 DPO zero point", [] { return check_dpo_zero_point(); });
  run("C4 hindsight targets and majority vote", [] { return check_hindsight(); });
  run("C5 incremental forward and K=1 decoding", [] { return check_incremental(); });
  run("C6 decode modes and cost ledger", [&] { return check_cost(run_dir); });
  run("C7 oracle-guided lift", [&] { return check_lift(RunMetrics(run_dir), cfg); });
  run("C8 per-objective heads", [&] { return check_heads(RunMetrics(run_dir)); });
  run("C9 head-weight sweep", [&] { return check_sweep(RunMetrics(run_dir)); });
  run("C10 reward model quality", [&] { return check_prm(RunMetrics(run_dir)); });
  run("C11 reproducible metrics", [&] { return check_reproducible(work); });

  std::size_t passed = 0;
  for (const auto& [name, o] : results) passed += o.pass ? 1 : 0;
  std::printf("%zu/%zu criteria passed\n", passed, results.size());
  return passed == results.size() ? 0 : 1;
}
