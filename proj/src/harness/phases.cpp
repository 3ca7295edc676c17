// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/phases.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "common/error.hpp"
#include "common/jsonl.hpp"
#include "common/rng.hpp"
#include "decode/decode.hpp"
#include "harness/tasks.hpp"
#include "mahdpo/mahdpo.hpp"
#include "numcore/gradcheck.hpp"
#include "numcore/ops.hpp"
#include "policy/checkpoint.hpp"
#include "prmlab/reward_model.hpp"
#include "synthtasks/style.hpp"

namespace mah::harness {

namespace fs = std::filesystem;
using policy::HeadSource;
using policy::PolicyModel;

std::string run_id_of(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.out.clear();
  return fmt::format("{:016x}", derive_seed(cfg.seed, c.to_text()));
}

RunContext::RunContext(RunConfig config)
    : cfg(std::move(config)), root(cfg.out), run_id(run_id_of(cfg)) {
  cfg.validate();
}

std::uint64_t RunContext::phase_seed(const std::string& phase) const {
  return derive_seed(cfg.seed, phase);
}

namespace {

const std::vector<std::string> kObjectives = {synth::kAccuracyObjective,
                                              synth::kStyleObjective};

class Emitter {
 public:
  Emitter(const RunContext& ctx, std::string phase)
      : ctx_(ctx), phase_(std::move(phase)) {}
  void add(const std::string& metric, double value, std::uint64_t seed) {
    rows_.push_back({ctx_.run_id, phase_, metric, value, seed});
  }
  void add(const std::string& metric, double value) {
    add(metric, value, ctx_.cfg.seed);
  }
  void flush() const { upsert_metrics(ctx_.metrics_path(), phase_, rows_); }

 private:
  const RunContext& ctx_;
  std::string phase_;
  std::vector<MetricsRow> rows_;
};

policy::ModelDims model_dims(const RunConfig& c, int heads = 1) {
  policy::ModelDims d;
  d.vocab_size = policy::Tokenizer().vocab_size();
  d.hidden_dim = c.hidden_dim;
  d.layers = c.layers;
  d.attn_heads = c.attn_heads;
  d.max_positions = c.max_positions;
  d.objective_heads = heads;
  return d;
}

SamplerSettings sampler_settings(const RunConfig& c) {
  SamplerSettings s;
  s.max_tokens = c.decode_max_tokens;
  s.chunk_cap = c.decode_chunk_cap;
  s.sampling.temperature = c.decode_temperature;
  s.sampling.top_p = c.decode_top_p;
  s.sampling.top_k = c.decode_top_k;
  return s;
}

synth::StyleJudgeSpec style_judge(const RunConfig& c) {
  synth::StyleJudgeSpec j;
  j.threshold = c.style_threshold;
  return j;
}

void require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    fail(ErrorCode::io, "missing " + p.string() + " (run the " + producer +
                            " phase first)");
}

std::shared_ptr<const PolicyModel> load_shared_policy(const fs::path& p,
                                                      const std::string& producer) {
  require_file(p, producer);
  return std::make_shared<const PolicyModel>(policy::load_policy(p));
}

// ---- sft -------------------------------------------------------------------

void phase_sft(const RunContext& ctx, Emitter& em) {
  const auto& c = ctx.cfg;
  const auto seed = ctx.phase_seed("sft");
  const auto problems = synth::gen_problems(derive_seed(c.seed, "task.sft"), c.sft_problems);
  Rng rng(derive_seed(seed, "corpus"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  policy::Tokenizer tok;
  std::vector<Json> corpus;
  std::vector<dpo::SftExample> data;
  std::size_t marked_count = 0;
  for (const auto& p : problems) {
    const bool marked = u(rng) < c.marked_fraction;
    marked_count += marked ? 1 : 0;
    const auto text = synth::render_noisy_solution(p, marked, c.sft_error_rate, rng);
    corpus.push_back(Json{{"prompt", p.prompt()}, {"response", text}, {"marked", marked}});
    data.push_back(dpo::make_sft_example(tok, p.prompt(), text));
  }
  write_jsonl(ctx.root / "sft" / "corpus.jsonl", corpus);
  auto model = PolicyModel::create(model_dims(c), tok, derive_seed(seed, "init"));
  dpo::SftConfig sc;
  sc.adam.lr = c.sft_lr;
  sc.cosine_decay = true;
  sc.epochs = c.sft_epochs;
  sc.batch_size = c.sft_batch_size;
  sc.seed = derive_seed(seed, "order");
  const auto rep = dpo::train_sft(model, data, sc);
  policy::save_policy(ctx.root / "sft" / "policy.ckpt", model);
  em.add("corpus_size", static_cast<double>(data.size()));
  em.add("marked_fraction", static_cast<double>(marked_count) / data.size());
  for (std::size_t e = 0; e < rep.epoch_losses.size(); ++e)
    em.add("loss_epoch" + std::to_string(e), rep.epoch_losses[e]);
  em.add("token_accuracy", rep.token_accuracy);
}

// ---- label -----------------------------------------------------------------

void phase_label(const RunContext& ctx, Emitter& em) {
  const auto& c = ctx.cfg;
  const auto seed = ctx.phase_seed("label");
  auto sft = load_shared_policy(ctx.root / "sft" / "policy.ckpt", "sft");
  const auto settings = sampler_settings(c);
  const auto cont = make_continuation(sft, settings);
  const auto judge = style_judge(c);

  prm::PrmLabelConfig lc;
  lc.gamma = c.label_gamma;
  lc.rollouts = c.label_rollouts;
  lc.max_steps = c.label_max_steps;
  const auto problems =
      synth::gen_problems(derive_seed(c.seed, "task.label"), c.label_problems);
  std::vector<prm::LabeledExample> value, style;
  double target_sum = 0.0;
  std::size_t truncated = 0, rollouts = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& p = problems[i];
    const auto response =
        sample_continuation(*sft, settings, p.prompt(), "", derive_seed(seed, {i, 0}));
    prm::StepTrajectory traj;
    traj.prompt = p.prompt();
    traj.steps = trajectory_steps(response, c.label_max_steps);
    if (traj.steps.empty()) continue;
    lc.seed = derive_seed(seed, {i, 1});
    const auto targets = prm::hindsight_targets(traj, cont, arithmetic_task(p), lc);
    for (const auto& vt : targets) {
      std::vector<std::string> prefix(traj.steps.begin(),
                                      traj.steps.begin() + vt.step + 1);
      std::string text;
      for (const auto& s : prefix) text += s;
      style.push_back({traj.prompt, prefix, prm::LabelMode::direct,
                       static_cast<double>(prm::direct_judge_label(
                           traj.prompt, text,
                           [&](const std::string&, const std::string& r) {
                             return judge.judge(r);
                           })),
                       ""});
      value.push_back({traj.prompt, std::move(prefix), prm::LabelMode::value,
                       vt.target, ""});
      target_sum += vt.target;
      for (bool t : vt.truncated) truncated += t ? 1 : 0;
      rollouts += vt.rollouts;
    }
  }
  prm::write_labeled(ctx.root / "label" / "value.jsonl", value);
  prm::write_labeled(ctx.root / "label" / "style.jsonl", style);

  const auto pair_problems =
      synth::gen_problems(derive_seed(c.seed, "task.pairs"), c.pair_problems);
  const auto rolls = synth::sample_rollouts(make_sampler(sft, settings), pair_problems,
                                            c.pair_rollouts, judge,
                                            derive_seed(seed, "pairs"));
  std::vector<Json> roll_rows;
  double correct = 0.0, styled = 0.0, n_rolls = 0.0;
  for (const auto& per : rolls)
    for (const auto& r : per) {
      roll_rows.push_back(r.to_json());
      correct += r.z;
      styled += judge.judge(r.text);
      n_rolls += 1.0;
    }
  write_jsonl(ctx.root / "label" / "rollouts.jsonl", roll_rows);
  auto pairs = synth::accuracy_pairs_from(rolls);
  const std::size_t n_acc = pairs.size();
  auto sp = synth::style_pairs_from(rolls);
  pairs.insert(pairs.end(), sp.begin(), sp.end());
  dpo::write_pairs(ctx.root / "label" / "pairs.jsonl", pairs);

  std::size_t positive = 0;
  for (const auto& e : style) positive += e.label >= 0.5 ? 1 : 0;
  em.add("value_examples", static_cast<double>(value.size()));
  em.add("value_target_mean", value.empty() ? 0.0 : target_sum / value.size());
  em.add("rollout_truncation_rate",
         rollouts == 0 ? 0.0 : static_cast<double>(truncated) / rollouts);
  em.add("style_examples", static_cast<double>(style.size()));
  em.add("style_positive_rate",
         style.empty() ? 0.0 : static_cast<double>(positive) / style.size());
  em.add("pair_rollout_accuracy", n_rolls > 0 ? correct / n_rolls : 0.0);
  em.add("pair_rollout_style_rate", n_rolls > 0 ? styled / n_rolls : 0.0);
  em.add("accuracy_pairs", static_cast<double>(n_acc));
  em.add("style_pairs", static_cast<double>(sp.size()));
}

// ---- train-prm ---------------------------------------------------------------

std::vector<synth::TextPair> pairs_of(const std::vector<synth::TextPair>& all,
                                      const std::string& objective) {
  std::vector<synth::TextPair> out;
  for (const auto& p : all)
    if (p.objective == objective) out.push_back(p);
  return out;
}

void phase_train_prm(const RunContext& ctx, Emitter& em) {
  const auto& c = ctx.cfg;
  const auto seed = ctx.phase_seed("train-prm");
  const auto sft_path = ctx.root / "sft" / "policy.ckpt";
  require_file(sft_path, "sft");
  const auto sft = policy::load_policy(sft_path);
  const auto value_path = ctx.root / "label" / "value.jsonl";
  require_file(value_path, "label");
  const auto value = prm::read_labeled(value_path);
  const auto style = prm::read_labeled(ctx.root / "label" / "style.jsonl");
  const auto pairs = dpo::read_pairs(ctx.root / "label" / "pairs.jsonl");

  prm::PrmTrainConfig tc;
  tc.adam.lr = c.prm_lr;
  tc.adam.clip_norm = 1.0;
  tc.epochs = c.prm_epochs;
  tc.batch_size = c.prm_batch_size;
  tc.heldout_fraction = c.prm_heldout_fraction;

  tc.seed = derive_seed(seed, "value");
  auto vm = prm::RewardModel::from_backbone(prm::RewardKind::value, sft.backbone(),
                                            sft.tokenizer(), tc.seed);
  const auto vr = prm::train_value_prm(vm, value, tc);
  prm::save_reward_model(ctx.root / "prm" / "value.ckpt", vm);
  em.add("value_train_mse", vr.train_metric);
  em.add("value_heldout_mse", vr.heldout_metric);
  em.add("value_heldout_size", static_cast<double>(vr.heldout_size));

  tc.seed = derive_seed(seed, "classifier");
  auto cm = prm::RewardModel::from_backbone(prm::RewardKind::classifier,
                                            sft.backbone(), sft.tokenizer(), tc.seed);
  const auto cr = prm::train_classifier_prm(cm, style, tc);
  prm::save_reward_model(ctx.root / "prm" / "classifier.ckpt", cm);
  em.add("classifier_train_accuracy", cr.train_metric);
  em.add("classifier_heldout_accuracy", cr.heldout_metric);

  tc.seed = derive_seed(seed, "bt");
  auto bm = prm::RewardModel::from_backbone(prm::RewardKind::bradley_terry,
                                            sft.backbone(), sft.tokenizer(), tc.seed);
  const auto br = prm::train_bt_reward(bm, pairs_of(pairs, synth::kStyleObjective), tc);
  prm::save_reward_model(ctx.root / "prm" / "bt.ckpt", bm);
  em.add("bt_train_ranking_accuracy", br.train_metric);
  em.add("bt_heldout_ranking_accuracy", br.heldout_metric);
  em.add("bt_heldout_size", static_cast<double>(br.heldout_size));

  if (c.prm_unified) {
    std::vector<prm::LabeledExample> pooled;
    for (auto e : value) {
      e.tag = "#0";
      pooled.push_back(std::move(e));
    }
    for (auto e : style) {
      e.tag = "#1";
      e.kind = prm::LabelMode::value;
      pooled.push_back(std::move(e));
    }
    tc.seed = derive_seed(seed, "unified");
    auto um = prm::RewardModel::from_backbone(prm::RewardKind::value, sft.backbone(),
                                              sft.tokenizer(), tc.seed);
    const auto ur = prm::train_value_prm(um, pooled, tc);
    prm::save_reward_model(ctx.root / "prm" / "unified.ckpt", um);
    em.add("unified_heldout_mse", ur.heldout_metric);
  }
}

// ---- train-mahdpo ------------------------------------------------------------

struct SplitPairs {
  std::vector<dpo::PreferencePair> train, heldout;
  std::vector<synth::TextPair> heldout_text;
};

SplitPairs split_pairs(const std::vector<synth::TextPair>& text,
                       const policy::Tokenizer& tok, double fraction,
                       std::uint64_t seed) {
  std::vector<std::string> prompts;
  for (const auto& p : text) prompts.push_back(p.prompt);
  auto [tr, te] = prm::split_by_prompt(prompts, fraction, seed);
  const auto objectives = dpo::make_objective_map(kObjectives);
  SplitPairs out;
  for (auto i : tr) out.train.push_back(dpo::encode_pair(tok, text[i], objectives));
  for (auto i : te) {
    out.heldout.push_back(dpo::encode_pair(tok, text[i], objectives));
    out.heldout_text.push_back(text[i]);
  }
  return out;
}

std::vector<dpo::PreferencePair> of_objective(
    const std::vector<dpo::PreferencePair>& pairs, int objective) {
  std::vector<dpo::PreferencePair> out;
  for (const auto& p : pairs)
    if (p.objective == objective) out.push_back(p);
  return out;
}

std::vector<double> uniform(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

void phase_train_mahdpo(const RunContext& ctx, Emitter& em) {
  const auto& c = ctx.cfg;
  const auto seed = ctx.phase_seed("train-mahdpo");
  const auto sft_path = ctx.root / "sft" / "policy.ckpt";
  require_file(sft_path, "sft");
  const auto sft = policy::load_policy(sft_path);
  const auto pairs_path = ctx.root / "label" / "pairs.jsonl";
  require_file(pairs_path, "label");
  const auto text = dpo::read_pairs(pairs_path);
  require(!text.empty(), "no preference pairs to train on");

  const int h = static_cast<int>(kObjectives.size());
  auto model = policy::init_heads(sft, h, c.dpo_perturb_scale, derive_seed(seed, "heads"));
  const auto reference = model.clone();
  auto split = split_pairs(text, sft.tokenizer(), c.dpo_heldout_fraction,
                           derive_seed(seed, "split"));
  dpo::write_pairs(ctx.root / "mahdpo" / "heldout_pairs.jsonl", split.heldout_text);

  dpo::TrainConfig tc;
  tc.beta = c.dpo_beta;
  tc.alpha = c.dpo_alpha;
  tc.adam.lr = c.dpo_lr;
  tc.batch_size = c.dpo_batch_size;
  tc.epochs = c.dpo_epochs;
  tc.balanced_batching = c.dpo_balanced;
  tc.seed = derive_seed(seed, "batches");
  const auto log = dpo::train_mahdpo(model, reference, split.train, tc);
  dpo::write_train_log(ctx.root / "mahdpo" / "train_log.csv", log, h);
  policy::save_policy(ctx.root / "mahdpo" / "policy.ckpt", model);

  em.add("train_pairs", static_cast<double>(split.train.size()));
  em.add("heldout_pairs", static_cast<double>(split.heldout.size()));
  em.add("steps", static_cast<double>(log.size()));
  if (!log.empty()) em.add("final_loss", log.back().metrics.loss);
  dpo::precompute_reference(reference, split.heldout);
  for (int o = 0; o < h; ++o) {
    const auto held = of_objective(split.heldout, o);
    const auto& name = kObjectives[static_cast<std::size_t>(o)];
    for (int head = 0; head < h; ++head) {
      const auto ev = dpo::evaluate_preferences(model, HeadSource::of_head(head),
                                                reference, held, c.dpo_beta);
      em.add(fmt::format("heldout_acc_head{}_{}", head, name), ev.accuracy);
      em.add(fmt::format("heldout_margin_head{}_{}", head, name), ev.mean_margin);
    }
    const auto ev = dpo::evaluate_preferences(
        model, HeadSource::ensemble(uniform(static_cast<std::size_t>(h))), reference,
        held, c.dpo_beta);
    em.add(fmt::format("heldout_acc_ensemble_{}", name), ev.accuracy);
    em.add(fmt::format("heldout_margin_ensemble_{}", name), ev.mean_margin);
  }
}

// ---- decode --------------------------------------------------------------------

std::shared_ptr<const decode::StepScorer> build_guidance(const RunContext& ctx,
                                                         const std::string& spec) {
  if (spec.empty() || spec == "none") return nullptr;
  auto combo = std::make_shared<decode::WeightedScorer>();
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    const std::string name = item.substr(0, colon);
    const double w = colon == std::string::npos
                         ? 1.0
                         : parse_double_list(item.substr(colon + 1)).at(0);
    std::shared_ptr<const decode::StepScorer> s;
    const bool unified = ctx.cfg.prm_unified;
    auto load = [&](const std::string& file, const std::string& tag) {
      const auto p = ctx.root / "prm" / file;
      require_file(p, "train-prm");
      return std::make_shared<prm::RewardScorer>(
          std::make_shared<const prm::RewardModel>(prm::load_reward_model(p)), tag);
    };
    if (name == "oracle") {
      s = std::make_shared<OracleScorer>();
    } else if (name == "value") {
      s = unified ? load("unified.ckpt", "#0") : load("value.ckpt", "");
    } else if (name == "classifier") {
      s = unified ? load("unified.ckpt", "#1") : load("classifier.ckpt", "");
    } else if (name == "bt") {
      s = load("bt.ckpt", "");
    } else {
      fail(ErrorCode::invalid_argument, "unknown guidance scorer '" + name + "'");
    }
    combo->add(std::move(s), w);
  }
  return combo;
}

decode::BoundaryCriteria boundary_of(const RunConfig& c, const policy::Tokenizer& tok) {
  if (c.decode_boundary.rfind("fixed:", 0) == 0)
    return decode::BoundaryCriteria::fixed(
        static_cast<std::size_t>(std::stoul(c.decode_boundary.substr(6))));
  return decode::BoundaryCriteria::at_separator(tok.separator(), c.decode_chunk_cap);
}

decode::DecodeConfig decode_config(const RunConfig& c, const PolicyModel& model,
                                   std::size_t k, std::uint64_t seed) {
  decode::DecodeConfig d;
  d.k = k;
  d.max_tokens = c.decode_max_tokens;
  d.boundary = boundary_of(c, model.tokenizer());
  d.sampling.temperature = c.decode_temperature;
  d.sampling.top_p = c.decode_top_p;
  d.sampling.top_k = c.decode_top_k;
  d.sampling.allow_eos = c.decode_allow_eos;
  d.seed = seed;
  d.mode = decode::parse_mode(c.decode_mode);
  if (model.num_heads() == 1) {
    d.source = HeadSource::of_head(0);
  } else {
    auto w = c.decode_weights.empty()
                 ? uniform(static_cast<std::size_t>(model.num_heads()))
                 : c.decode_weights;
    d.source = HeadSource::ensemble(std::move(w));
  }
  return d;
}

fs::path decode_policy_path(const RunContext& ctx) {
  const auto p = ctx.root / "mahdpo" / "policy.ckpt";
  return fs::exists(p) ? p : ctx.root / "sft" / "policy.ckpt";
}

void phase_decode(const RunContext& ctx, Emitter& em) {
  const auto& c = ctx.cfg;
  const auto seed = ctx.phase_seed("decode");
  const auto path = decode_policy_path(ctx);
  require_file(path, "train-mahdpo");
  const auto model = policy::load_policy(path);
  const auto guidance = build_guidance(ctx, c.decode_guidance);
  const auto problems =
      synth::gen_problems(derive_seed(c.seed, "task.decode"), c.decode_problems);
  const auto judge = style_judge(c);
  const auto& tok = model.tokenizer();
  std::vector<Json> rows;
  const fs::path ledger_path = ctx.root / "decode" / ("ledger_" + c.decode_mode + ".csv");
  fs::create_directories(ledger_path.parent_path());
  std::ofstream ledger(ledger_path, std::ios::binary);
  if (!ledger) fail(ErrorCode::io, "cannot write " + ledger_path.string());
  ledger << "problem,mode,prompt_len,steps,committed_tokens,candidate_tokens,"
            "token_forwards,prompt_reencodes,reencoded_positions\n";
  double correct = 0.0, styled = 0.0, forwards = 0.0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& p = problems[i];
    auto cfg = decode_config(c, model, c.decode_k, derive_seed(seed, {i}));
    const auto prompt = tok.encode_prompt(p.prompt());
    const auto res = decode::run_decode(model, guidance.get(), prompt, cfg);
    const auto text = res.text(tok);
    const auto v = synth::verify(p, text);
    std::vector<std::string> steps;
    for (const auto& s : res.steps) steps.push_back(tok.detokenize(s));
    rows.push_back(Json{{"prompt", p.prompt()},
                        {"steps", steps},
                        {"response", text},
                        {"scores", res.scores},
                        {"selected", res.selected},
                        {"ledger", res.ledger.to_json()},
                        {"z", v.z},
                        {"style", judge.judge(text)}});
    const auto& l = res.ledger;
    ledger << i << ',' << c.decode_mode << ',' << l.prompt_len << ',' << l.steps << ','
           << l.committed_tokens << ',' << l.candidate_tokens << ',' << l.token_forwards
           << ',' << l.prompt_reencodes << ',' << l.reencoded_positions << '\n';
    correct += v.z;
    styled += judge.judge(text);
    forwards += static_cast<double>(l.token_forwards);
  }
  write_jsonl(ctx.root / "decode" / ("outputs_" + c.decode_mode + ".jsonl"), rows);
  const double n = static_cast<double>(problems.size());
  const std::string m = c.decode_mode;
  em.add(m + ".accuracy", correct / n);
  em.add(m + ".style_rate", styled / n);
  em.add(m + ".token_forwards", forwards);
}

// ---- eval ----------------------------------------------------------------------

struct Outcome {
  double accuracy = 0.0;
  double style = 0.0;
  double forwards = 0.0;
};

Outcome evaluate(const PolicyModel& model, const decode::StepScorer* scorer,
                 const std::vector<synth::ArithmeticProblem>& problems,
                 const decode::DecodeConfig& base, const synth::StyleJudgeSpec& judge,
                 std::uint64_t seed) {
  require(!problems.empty(), "evaluation set is empty");
  Outcome o;
  const auto& tok = model.tokenizer();
  for (std::size_t i = 0; i < problems.size(); ++i) {
    auto cfg = base;
    cfg.seed = derive_seed(seed, {i});
    const auto res =
        decode::run_decode(model, scorer, tok.encode_prompt(problems[i].prompt()), cfg);
    const auto text = res.text(tok);
    o.accuracy += synth::verify(problems[i], text).z;
    o.style += judge.judge(text);
    o.forwards += static_cast<double>(res.ledger.token_forwards);
  }
  const double n = static_cast<double>(problems.size());
  o.accuracy /= n;
  o.style /= n;
  return o;
}

struct Series {
  std::vector<double> values;
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
  }
  // Sample standard deviation; 0 for a single value.
  double stddev() const {
    if (values.size() < 2) return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

const std::vector<std::vector<double>>& sweep_grid() {
  static const std::vector<std::vector<double>> g = {
      {1.0, 0.0}, {0.75, 0.25}, {0.5, 0.5}, {0.25, 0.75}, {0.0, 1.0}};
  return g;
}

void phase_eval(const RunContext& ctx, Emitter& em) {
  const auto& c = ctx.cfg;
  const auto seed = ctx.phase_seed("eval");
  const auto sft_path = ctx.root / "sft" / "policy.ckpt";
  require_file(sft_path, "sft");
  const auto sft = policy::load_policy(sft_path);
  const auto judge = style_judge(c);
  const auto problems =
      synth::gen_problems(derive_seed(c.seed, "task.eval"), c.eval_problems);
  const std::vector<synth::ArithmeticProblem> learned_set(
      problems.begin(),
      problems.begin() + static_cast<std::ptrdiff_t>(
                             std::min(c.eval_learned_problems, problems.size())));
  const std::vector<synth::ArithmeticProblem> sweep_set(
      problems.begin(),
      problems.begin() + static_cast<std::ptrdiff_t>(
                             std::min(c.eval_sweep_problems, problems.size())));
  OracleScorer oracle;
  std::shared_ptr<const decode::StepScorer> learned;
  if (fs::exists(ctx.root / "prm" / "value.ckpt")) learned = build_guidance(ctx, "value:1");
  std::unique_ptr<PolicyModel> mah;
  if (fs::exists(ctx.root / "mahdpo" / "policy.ckpt"))
    mah = std::make_unique<PolicyModel>(
        policy::load_policy(ctx.root / "mahdpo" / "policy.ckpt"));

  std::map<std::string, Series> series;
  auto record = [&](const std::string& name, double v, std::uint64_t s) {
    series[name].values.push_back(v);
    em.add(name, v, s);
  };
  for (std::size_t s = 0; s < c.eval_seeds; ++s) {
    const auto es = derive_seed(seed, {s});
    auto k1 = decode_config(c, sft, 1, es);
    k1.mode = decode::DecodeMode::cache_carry;
    const auto base = evaluate(sft, nullptr, problems, k1, judge, es);
    record("sft.k1.accuracy", base.accuracy, es);
    record("sft.k1.style_rate", base.style, es);
    auto kk = decode_config(c, sft, c.eval_k, es);
    kk.mode = decode::DecodeMode::cache_carry;
    const auto guided = evaluate(sft, &oracle, problems, kk, judge, es);
    record("sft.oracle_k.accuracy", guided.accuracy, es);
    record("sft.oracle_k.token_forwards", guided.forwards, es);
    record("sft.oracle_lift", guided.accuracy - base.accuracy, es);
    if (learned && !learned_set.empty()) {
      const auto lg = evaluate(sft, learned.get(), learned_set, kk, judge, es);
      const auto lb = evaluate(sft, nullptr, learned_set, k1, judge, es);
      record("sft.value_prm_k.accuracy", lg.accuracy, es);
      record("sft.value_prm_lift", lg.accuracy - lb.accuracy, es);
    }
    if (mah && !sweep_set.empty()) {
      for (std::size_t g = 0; g < sweep_grid().size(); ++g) {
        auto cfg = decode_config(c, *mah, 1, es);
        cfg.mode = decode::DecodeMode::cache_carry;
        cfg.source = HeadSource::ensemble(sweep_grid()[g]);
        const auto o = evaluate(*mah, nullptr, sweep_set, cfg, judge, es);
        record(fmt::format("sweep{}.accuracy", g), o.accuracy, es);
        record(fmt::format("sweep{}.style_rate", g), o.style, es);
      }
    }
  }
  for (const auto& [name, sr] : series) {
    em.add(name + ".mean", sr.mean());
    em.add(name + ".std", sr.stddev());
  }
  if (mah) {
    fs::create_directories(ctx.root / "eval");
    std::ofstream sweep(ctx.root / "eval" / "sweep.csv", std::ios::binary);
    sweep << "w0,w1,accuracy_mean,accuracy_std,style_mean,style_std\n";
    for (std::size_t g = 0; g < sweep_grid().size(); ++g) {
      const auto& a = series[fmt::format("sweep{}.accuracy", g)];
      const auto& st = series[fmt::format("sweep{}.style_rate", g)];
      sweep << fmt::format("{},{},{},{},{},{}\n", sweep_grid()[g][0], sweep_grid()[g][1],
                           a.mean(), a.stddev(), st.mean(), st.stddev());
    }
    // Held-out preference accuracy of every head and the uniform ensemble.
    const auto held_path = ctx.root / "mahdpo" / "heldout_pairs.jsonl";
    if (fs::exists(held_path)) {
      const auto text = dpo::read_pairs(held_path);
      const auto objectives = dpo::make_objective_map(kObjectives);
      auto held = dpo::encode_pairs(sft.tokenizer(), text, objectives);
      auto reference = policy::init_heads(sft, mah->num_heads(), 0.0, 0);
      dpo::precompute_reference(reference, held);
      for (int o = 0; o < mah->num_heads(); ++o) {
        const auto subset = of_objective(held, o);
        if (subset.empty()) continue;
        const auto& name = kObjectives[static_cast<std::size_t>(o)];
        for (int head = 0; head < mah->num_heads(); ++head) {
          const auto ev = dpo::evaluate_preferences(*mah, HeadSource::of_head(head),
                                                    reference, subset, c.dpo_beta);
          em.add(fmt::format("pref_acc_head{}_{}", head, name), ev.accuracy);
          em.add(fmt::format("pref_margin_head{}_{}", head, name), ev.mean_margin);
        }
        const auto ev = dpo::evaluate_preferences(
            *mah, HeadSource::ensemble(uniform(static_cast<std::size_t>(mah->num_heads()))),
            reference, subset, c.dpo_beta);
        em.add(fmt::format("pref_acc_ensemble_{}", name), ev.accuracy);
      }
    }
  }
}

}  // namespace

void run_phase(const RunContext& ctx, const std::string& phase) {
  const auto start = std::chrono::steady_clock::now();
  // Decode results are kept per mode so both ledgers coexist in one run.
  const std::string label = phase == "decode" ? phase + ":" + ctx.cfg.decode_mode : phase;
  spdlog::info("phase {} starting", label);
  Emitter em(ctx, label);
  fs::create_directories(ctx.root);
  if (phase == "sft") {
    phase_sft(ctx, em);
  } else if (phase == "label") {
    phase_label(ctx, em);
  } else if (phase == "train-prm") {
    phase_train_prm(ctx, em);
  } else if (phase == "train-mahdpo") {
    phase_train_mahdpo(ctx, em);
  } else if (phase == "decode") {
    phase_decode(ctx, em);
  } else if (phase == "eval") {
    phase_eval(ctx, em);
  } else {
    fail(ErrorCode::invalid_argument, "unknown phase '" + phase + "'");
  }
  em.flush();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  record_timing(ctx.root / "timings.csv", ctx.run_id, label, secs);
  spdlog::info("phase {} finished in {:.1f}s", label, secs);
}

void run_pipeline(const RunConfig& cfg) {
  RunContext ctx(cfg);
  fs::create_directories(ctx.root);
  cfg.save(ctx.root / "config.txt");
  fs::remove(ctx.metrics_path());
  fs::remove(ctx.root / "timings.csv");
  for (const auto& phase : pipeline_phases()) {
    try {
      run_phase(ctx, phase);
      if (phase == "decode") {
        // The other mode too, so the cost report can compare both ledgers.
        RunContext other = ctx;
        other.cfg.decode_mode = ctx.cfg.decode_mode == "cache-carry" ? "re-encode" : "cache-carry";
        run_phase(other, phase);
      }
    } catch (const Error& e) {
      fail(e.code(), "phase " + phase + " failed: " + e.what());
    } catch (const std::exception& e) {
      fail(ErrorCode::contract, "phase " + phase + " failed: " + e.what());
    }
  }
}

// ---- gradcheck -----------------------------------------------------------------

std::string GradcheckSummary::to_text() const {
  std::string s = "loss,max_rel_error,coordinates,status\n";
  for (const auto& e : entries)
    s += fmt::format("{},{:.3e},{},{}\n", e.loss, e.max_rel_error, e.coordinates,
                     e.passed ? "pass" : "FAIL");
  s += "\nhead isolation: |dL/dW_j| on a batch holding only objective b\n";
  s += "head";
  for (std::size_t b = 0; b < isolation.size(); ++b) s += fmt::format(",batch_obj{}", b);
  s += "\n";
  for (std::size_t j = 0; j < isolation.size(); ++j) {
    s += fmt::format("W_{}", j);
    for (double v : isolation[j]) s += fmt::format(",{}", v);
    s += "\n";
  }
  s += fmt::format("\nbackbone additivity max abs error: {:.3e}\n", additivity_error);
  s += fmt::format("elapsed: {:.2f}s\nresult: {}\n", seconds, passed ? "PASS" : "FAIL");
  return s;
}

GradcheckSummary run_gradcheck(std::uint64_t seed, double tolerance) {
  const auto start = std::chrono::steady_clock::now();
  namespace nc = mah::numcore;
  policy::ModelDims dims;
  dims.hidden_dim = 16;
  dims.layers = 2;
  dims.attn_heads = 2;
  dims.max_positions = 32;
  policy::Tokenizer tok;
  auto lm = PolicyModel::create(dims, tok, derive_seed(seed, "gradcheck.lm"));
  auto model = policy::init_heads(lm, 2, 0.05, derive_seed(seed, "gradcheck.heads"));
  const auto reference = model.clone();
  auto pair = [&](const char* x, const char* w, const char* l, int obj) {
    synth::TextPair t{x, w, l, kObjectives[static_cast<std::size_t>(obj)]};
    return dpo::encode_pair(tok, t, dpo::make_objective_map(kObjectives));
  };
  std::vector<dpo::PreferencePair> pairs = {
      pair("3+4:", "3+4=7\n", "3+4=8\n", 0),
      pair("5-2:", "ANS 3\n", "ANS 4\n", 0),
      pair("1+1:", "1+1=2*\n", "1+1=2\n", 1),
  };
  dpo::precompute_reference(reference, pairs);
  dpo::TrainConfig tc;
  tc.alpha = {0.3, 0.7};
  auto params = model.trainable_parameters();
  GradcheckSummary out;
  auto check = [&](const std::string& name, const std::function<numcore::Tensor()>& f,
                   std::vector<numcore::Tensor> ps) {
    const auto r = nc::grad_check(f, ps, 1e-6, tolerance);
    out.entries.push_back({name, r.max_rel_error, r.coordinates, r.passed});
  };
  check("dpo_pair", [&] {
    return dpo::dpo_pair_loss(model, HeadSource::of_head(0), reference, pairs[0], 0.1).loss;
  }, params);
  const auto mixed = dpo::route_batch(pairs, 2);
  check("mahdpo_combined", [&] { return dpo::combined_loss(model, reference, mixed, tc); },
        params);

  auto vm = prm::RewardModel::from_backbone(prm::RewardKind::value, lm.backbone(), tok,
                                            derive_seed(seed, "gradcheck.prm"));
  std::vector<prm::LabeledExample> ex = {
      {"3+4:", {"3+4=7\n"}, prm::LabelMode::value, 1.9, ""},
      {"3+4:", {"3+4=7\n", "ANS 7\n"}, prm::LabelMode::value, 2.0, ""},
      {"5-2:", {"5-2=4\n"}, prm::LabelMode::value, 0.3, ""},
  };
  const auto groups = prm::build_groups(vm, ex);
  check("prm_mse", [&] { return prm::value_loss_graph(vm, groups); }, vm.parameters());
  auto bm = prm::RewardModel::from_backbone(prm::RewardKind::bradley_terry, lm.backbone(),
                                            tok, derive_seed(seed, "gradcheck.bt"));
  std::vector<prm::TokenPair> bt = {
      {bm.encode("", "1+1:", "1+1=2*\n"), bm.encode("", "1+1:", "1+1=2\n")},
      {bm.encode("", "2+2:", "2+2=4*\nANS 4\n"), bm.encode("", "2+2:", "ANS 5\n")},
  };
  check("bt", [&] { return prm::bt_loss_graph(bm, bt); }, bm.parameters());

  // Isolation and additivity on analytic gradients.
  auto grads_for = [&](const dpo::MiniBatch& b) {
    nc::zero_grads(params);
    nc::backward(dpo::combined_loss(model, reference, b, tc));
    return nc::gradient_map(params);
  };
  const std::size_t n_bb = model.backbone_parameters().size();
  std::vector<std::vector<std::vector<double>>> single;
  out.isolation.assign(2, std::vector<double>(2, 0.0));
  for (int b = 0; b < 2; ++b) {
    const auto sub = of_objective(pairs, b);
    auto g = grads_for(dpo::route_batch(sub, 2));
    for (int j = 0; j < 2; ++j) {
      double sq = 0.0;
      for (double v : g[n_bb + static_cast<std::size_t>(j)]) sq += v * v;
      out.isolation[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)] =
          std::sqrt(sq);
    }
    single.push_back(std::move(g));
  }
  const auto g_mixed = grads_for(mixed);
  for (std::size_t p = 0; p < n_bb; ++p)
    for (std::size_t i = 0; i < g_mixed[p].size(); ++i)
      out.additivity_error =
          std::max(out.additivity_error,
                   std::abs(g_mixed[p][i] - (single[0][p][i] + single[1][p][i])));
  nc::zero_grads(params);

  bool ok = out.additivity_error <= 1e-10;
  for (const auto& e : out.entries) ok = ok && e.passed;
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t b = 0; b < 2; ++b)
      if (j != b) ok = ok && out.isolation[j][b] == 0.0;
  out.passed = ok;
  out.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---- cost report ---------------------------------------------------------------

std::string CostReport::to_text() const {
  std::string s = "mode,prompts,measured,predicted,closed_form,fixed_length,match\n";
  for (const auto& r : rows)
    s += fmt::format("{},{},{},{},{},{},{}\n", r.mode, r.prompts, r.measured, r.predicted,
                     r.fixed_length ? std::to_string(r.closed_form) : std::string("n/a"),
                     r.fixed_length ? "yes" : "no", r.matches ? "yes" : "MISMATCH");
  s += fmt::format("ratio re-encode/cache-carry: {:.4f}\nresult: {}\n", ratio,
                   passed ? "PASS" : "FAIL");
  return s;
}

CostReport run_cost_report(const fs::path& decode_dir) {
  CostReport rep;
  rep.passed = true;
  for (const std::string mode : {"cache-carry", "re-encode"}) {
    const auto path = decode_dir / ("outputs_" + mode + ".jsonl");
    if (!fs::exists(path))
      fail(ErrorCode::io, "cost report: no " + mode + " decode outputs at " +
                              path.string() + " (run decode with --mode " + mode + ")");
    CostRow row;
    row.mode = mode;
    row.fixed_length = true;
    for (const auto& j : read_jsonl(path)) {
      const auto l = decode::CostLedger::from_json(j.at("ledger"));
      const auto selected = j.at("selected").get<std::vector<std::size_t>>();
      row.prompts += 1;
      row.measured += l.token_forwards;
      std::uint64_t committed = 0, predicted = mode == "cache-carry" ? l.prompt_len : 0;
      std::size_t first_len = 0;
      bool fixed = !l.candidate_lengths.empty();
      for (std::size_t t = 0; t < l.candidate_lengths.size(); ++t) {
        for (auto len : l.candidate_lengths[t]) {
          predicted += len;
          if (mode == "re-encode") predicted += l.prompt_len + committed;
          if (first_len == 0) first_len = len;
          fixed = fixed && len == first_len;
        }
        committed += l.candidate_lengths[t].at(selected.at(t));
      }
      row.predicted += predicted;
      row.fixed_length = row.fixed_length && fixed;
      if (fixed) {
        const auto est = decode::cost_estimate(l.prompt_len, l.steps,
                                               l.candidate_lengths.front().size(), first_len);
        row.closed_form += mode == "cache-carry" ? est.cache_carry : est.re_encode;
      }
    }
    row.matches = row.measured == row.predicted &&
                  (!row.fixed_length || row.measured == row.closed_form);
    rep.passed = rep.passed && row.matches;
    rep.rows.push_back(row);
  }
  rep.ratio = rep.rows[0].measured == 0
                  ? 0.0
                  : static_cast<double>(rep.rows[1].measured) /
                        static_cast<double>(rep.rows[0].measured);
  return rep;
}

}  // namespace mah::harness
