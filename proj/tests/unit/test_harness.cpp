// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include <doctest.h>

#include "common/error.hpp"
#include "common/jsonl.hpp"
#include "harness/config.hpp"
#include "harness/metrics.hpp"
#include "harness/phases.hpp"
#include "harness/tasks.hpp"
#include "helpers.hpp"

using namespace mah;
using namespace mah::harness;

TEST_CASE("config text round-trips byte for byte") {
  RunConfig c;
  c.seed = 99;
  c.dpo_alpha = {0.25, 0.75};
  c.decode_weights = {0.1, 0.9};
  c.decode_boundary = "fixed:6";
  const auto text = c.to_text();
  const auto back = RunConfig::parse(text);
  CHECK(back.to_text() == text);
  CHECK(back.seed == 99);
  CHECK(back.dpo_alpha == c.dpo_alpha);
  for (const auto& k : RunConfig::keys()) {
    CHECK(text.find(k + "=") != std::string::npos);
    CHECK_FALSE(RunConfig::describe(k).empty());
  }
}

TEST_CASE("config parsing fails fast") {
  CHECK_THROWS_AS(RunConfig::parse("run.sed=3\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("run.seed=3\nrun.seed=4\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("run.seed\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("run.seed=abc\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("decode.mode=fast\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("decode.boundary=fixed:x\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("model.hidden_dim=63\n"), Error);
  CHECK_THROWS_AS(RunConfig::parse("prm.unified=maybe\n"), Error);
  try {
    RunConfig::parse("# comment\n\nbogus.key=1\n");
    FAIL("expected an unknown-key error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  const auto ok = RunConfig::parse("  run.seed = 7  \n# x\n");
  CHECK(ok.seed == 7);
  CHECK(parse_double_list("") .empty());
  CHECK(parse_double_list("0.5,0.5") == std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(parse_double_list("0.5,,1"), Error);
}

TEST_CASE("run id ignores the output directory only") {
  RunConfig a, b;
  b.out = "elsewhere";
  CHECK(run_id_of(a) == run_id_of(b));
  b.seed = a.seed + 1;
  CHECK(run_id_of(a) != run_id_of(b));
  RunContext ctx(a);
  CHECK(ctx.phase_seed("sft") != ctx.phase_seed("label"));
}

TEST_CASE("metrics upsert replaces a phase in place") {
  test::TempDir dir("metrics");
  const auto path = dir.path() / "metrics.csv";
  upsert_metrics(path, "a", {{"r", "a", "x", 1.0, 1}, {"r", "a", "y", 2.0, 1}});
  upsert_metrics(path, "b", {{"r", "b", "x", 3.0, 1}});
  upsert_metrics(path, "a", {{"r", "a", "x", 5.5, 2}});
  const auto rows = read_metrics(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].phase == "b");
  CHECK(rows[1].value == 5.5);
  CHECK(rows[1].seed == 2);
  {
    std::ofstream bad(dir.path() / "bad.csv");
    bad << "run_id,phase,metric,value\n";
  }
  CHECK_THROWS_AS(read_metrics(dir.path() / "bad.csv"), Error);
  record_timing(dir.path() / "t.csv", "r", "a", 1.5);
  std::ifstream t(dir.path() / "t.csv");
  std::string header;
  std::getline(t, header);
  CHECK(header == kTimingsHeader);
}

TEST_CASE("metrics values survive a write/read cycle exactly") {
  test::TempDir dir("metrics_exact");
  const double v = 0.1 + 0.2;
  write_metrics(dir.path() / "m.csv", {{"r", "p", "m", v, 18446744073709551615ull}});
  const auto rows = read_metrics(dir.path() / "m.csv");
  CHECK(rows[0].value == v);
  CHECK(rows[0].seed == 18446744073709551615ull);
}

TEST_CASE("oracle scorer and task adapter follow the verifier") {
  OracleScorer o;
  CHECK(o.score("3+4-2:", "", "3+4=7\n") == 1.0);
  CHECK(o.score("3+4-2:", "3+4=7\n", "7-2=4\n") == 0.0);
  CHECK_THROWS_AS(o.score("not a prompt", "", "1\n"), Error);
  const auto p = *synth::parse_prompt("3+4-2:");
  const auto task = arithmetic_task(p);
  const std::vector<std::string> steps = {"3+4=7\n", "7-2=5\n", "ANS 5\n"};
  CHECK(task.step_reward(0, steps) == 1.0);
  CHECK(task.is_terminal("ANS 5\n"));
  CHECK_FALSE(task.is_terminal("3+4=7\n"));
  CHECK(task.outcome(steps) == 1);
}

TEST_CASE("trajectory steps stop at the answer line and the cap") {
  CHECK(trajectory_steps("a\nANS 1\nb\n", 10) == std::vector<std::string>{"a\n", "ANS 1\n"});
  CHECK(trajectory_steps("a\nb\nc\n", 2) == std::vector<std::string>{"a\n", "b\n"});
}

TEST_CASE("cost report compares measured and predicted counts") {
  test::TempDir dir("cost");
  decode::CostLedger cc;
  cc.prompt_len = 5;
  cc.steps = 2;
  cc.candidate_lengths = {{3, 3}, {3, 3}};
  cc.token_forwards = 5 + 12;
  decode::CostLedger re = cc;
  re.token_forwards = 2 * (5 + 3) + 2 * (5 + 3 + 3);
  write_jsonl(dir.path() / "outputs_cache-carry.jsonl",
              {Json{{"ledger", cc.to_json()}, {"selected", {0, 1}}}});
  write_jsonl(dir.path() / "outputs_re-encode.jsonl",
              {Json{{"ledger", re.to_json()}, {"selected", {0, 1}}}});
  auto rep = run_cost_report(dir.path());
  CHECK(rep.passed);
  CHECK(rep.rows[0].fixed_length);
  CHECK(rep.rows[1].closed_form == rep.rows[1].measured);
  CHECK(rep.ratio == doctest::Approx(38.0 / 17.0));

  re.token_forwards += 1;
  write_jsonl(dir.path() / "outputs_re-encode.jsonl",
              {Json{{"ledger", re.to_json()}, {"selected", {0, 1}}}});
  CHECK_FALSE(run_cost_report(dir.path()).passed);
  CHECK_THROWS_AS(run_cost_report(dir.path() / "nope"), Error);
}

TEST_CASE("phases report missing inputs and unknown names") {
  test::TempDir dir("phases");
  RunConfig c;
  c.out = dir.path().string();
  RunContext ctx(c);
  try {
    run_phase(ctx, "label");
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
    CHECK(std::string(e.what()).find("sft") != std::string::npos);
  }
  CHECK_THROWS_AS(run_phase(ctx, "bogus"), Error);
}
