// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Links only the C interface.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mahalign/mahalign.h"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::size_t> k;
  std::vector<double> weights;
  double tolerance = 1e-4;
};

void to_stdout(const char* data, size_t size, void*) {
  std::fwrite(data, 1, size, stdout);
}

int report(mah_status s) {
  if (s == MAH_OK) return 0;
  std::fprintf(stderr, "error (%s): %s\n", mah_status_name(s), mah_last_error());
  return 1;
}

class Config {
 public:
  ~Config() { mah_config_free(cfg_); }
  mah_config* get() const { return cfg_; }

  mah_status build(const Options& o) {
    mah_status s = o.config.empty() ? mah_config_default(&cfg_)
                                    : mah_config_load(o.config.c_str(), &cfg_);
    if (s != MAH_OK) return s;
    if (o.seed) s = set("run.seed", std::to_string(*o.seed));
    if (s == MAH_OK && o.out) s = set("run.out", *o.out);
    if (s == MAH_OK && o.mode) s = set("decode.mode", *o.mode);
    if (s == MAH_OK && o.k) s = set("decode.k", std::to_string(*o.k));
    if (s == MAH_OK && !o.weights.empty()) {
      std::string w;
      for (std::size_t i = 0; i < o.weights.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", o.weights[i]);
        w += (i ? "," : "") + std::string(buf);
      }
      s = set("decode.weights", w);
    }
    return s == MAH_OK ? mah_config_validate(cfg_) : s;
  }

  std::string out_dir() const {
    std::string text;
    mah_config_write(
        cfg_, [](const char* d, size_t n, void* u) { static_cast<std::string*>(u)->append(d, n); },
        &text);
    const std::string key = "run.out=";
    const auto pos = text.find(key);
    const auto end = text.find('\n', pos);
    return text.substr(pos + key.size(), end - pos - key.size());
  }

 private:
  mah_status set(const std::string& k, const std::string& v) {
    return mah_config_set(cfg_, k.c_str(), v.c_str());
  }
  mah_config* cfg_ = nullptr;
};

void add_run_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Run configuration file (key=value)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Master seed (run.seed)");
  cmd->add_option("--out", o.out, "Run directory (run.out)");
}

void add_decode_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--mode", o.mode, "Decoding mode (decode.mode)")
      ->check(CLI::IsMember({"cache-carry", "re-encode"}));
  cmd->add_option("--k", o.k, "Candidates per step (decode.k)")->check(CLI::PositiveNumber);
  cmd->add_option("--weights", o.weights, "Head mixture weights w0,w1,... (decode.weights)")
      ->delimiter(',');
}

}  // namespace

int main(int argc, char** argv) {
  mah_init_logging();
  CLI::App app{"mahctl: multi-objective alignment pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mah_version()));
  Options o;

  const std::vector<std::pair<std::string, std::string>> phases = {
      {"sft", "Supervised warm-up on the synthetic corpus"},
      {"label", "Sample rollouts, build value/style labels and preference pairs"},
      {"train-prm", "Train the value, classifier and Bradley-Terry reward models"},
      {"train-mahdpo", "Train the multi-head policy with per-objective DPO"},
      {"decode", "Run guided decoding and record cost ledgers"},
      {"eval", "Evaluate guided decoding and the head-weight sweep"},
  };
  auto* pipeline = app.add_subcommand("pipeline", "Run every phase in order");
  add_run_flags(pipeline, o);
  add_decode_flags(pipeline, o);
  std::vector<CLI::App*> phase_cmds;
  for (const auto& [name, help] : phases) {
    auto* cmd = app.add_subcommand(name, help);
    add_run_flags(cmd, o);
    if (name == "decode" || name == "eval") add_decode_flags(cmd, o);
    phase_cmds.push_back(cmd);
  }
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--seed", o.seed, "Seed for the test model");
  gradcheck->add_option("--tolerance", o.tolerance, "Maximum relative error")
      ->check(CLI::PositiveNumber);
  auto* cost = app.add_subcommand("cost-report",
                                  "Compare measured decode cost against predictions");
  add_run_flags(cost, o);

  CLI11_PARSE(app, argc, argv);

  if (gradcheck->parsed()) {
    int passed = 0;
    const int rc = report(mah_gradcheck(o.seed.value_or(0), o.tolerance, to_stdout, nullptr,
                                        &passed));
    return rc != 0 ? rc : (passed ? 0 : 1);
  }
  Config cfg;
  if (const int rc = report(cfg.build(o)); rc != 0) return rc;
  if (pipeline->parsed()) return report(mah_run_pipeline(cfg.get()));
  if (cost->parsed()) {
    int passed = 0;
    const std::string dir = cfg.out_dir() + "/decode";
    const int rc = report(mah_cost_report(dir.c_str(), to_stdout, nullptr, &passed));
    return rc != 0 ? rc : (passed ? 0 : 1);
  }
  for (auto* cmd : phase_cmds)
    if (cmd->parsed()) return report(mah_run_phase(cfg.get(), cmd->get_name().c_str()));
  return 2;
}
