// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "mahalign/mahalign.h"

#include <exception>
#include <memory>
#include <new>
#include <string>

#include "common/error.hpp"
#include "common/log.hpp"
#include "decode/decode.hpp"
#include "harness/config.hpp"
#include "harness/phases.hpp"
#include "policy/checkpoint.hpp"

struct mah_config {
  mah::harness::RunConfig cfg;
};

struct mah_policy {
  mah::policy::PolicyModel model;
};

namespace {

thread_local std::string g_last_error;

mah_status status_of(mah::ErrorCode code) {
  switch (code) {
    case mah::ErrorCode::invalid_argument:
    case mah::ErrorCode::shape_mismatch:
      return MAH_INVALID_ARGUMENT;
    case mah::ErrorCode::io:
      return MAH_IO;
    case mah::ErrorCode::checksum:
      return MAH_CHECKSUM;
    case mah::ErrorCode::contract:
      return MAH_CONTRACT;
    case mah::ErrorCode::numeric:
      return MAH_NUMERIC;
  }
  return MAH_INTERNAL;
}

template <typename F>
mah_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return MAH_OK;
  } catch (const mah::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return MAH_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MAH_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MAH_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) mah::fail(mah::ErrorCode::invalid_argument, std::string(what) + " is null");
}

void emit(mah_write_fn write, void* user, const std::string& text) {
  if (write != nullptr && !text.empty()) write(text.data(), text.size(), user);
}

}  // namespace

extern "C" {

const char* mah_version(void) { return "1.0.0"; }

const char* mah_last_error(void) { return g_last_error.c_str(); }

const char* mah_status_name(mah_status status) {
  switch (status) {
    case MAH_OK: return "ok";
    case MAH_INVALID_ARGUMENT: return "invalid argument";
    case MAH_IO: return "io error";
    case MAH_CHECKSUM: return "checksum mismatch";
    case MAH_CONTRACT: return "contract violation";
    case MAH_NUMERIC: return "numeric error";
    case MAH_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void mah_init_logging(void) { mah::init_logging(); }

mah_status mah_config_default(mah_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new mah_config{};
  });
}

mah_status mah_config_load(const char* path, mah_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto c = std::make_unique<mah_config>();
    c->cfg = mah::harness::RunConfig::load(path);
    *out = c.release();
  });
}

mah_status mah_config_parse(const char* text, mah_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    auto c = std::make_unique<mah_config>();
    c->cfg = mah::harness::RunConfig::parse(text);
    *out = c.release();
  });
}

mah_status mah_config_set(mah_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

mah_status mah_config_write(const mah_config* cfg, mah_write_fn write, void* user) {
  return guarded([&] {
    need(cfg, "config");
    emit(write, user, cfg->cfg.to_text());
  });
}

mah_status mah_config_validate(const mah_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.validate();
  });
}

void mah_config_free(mah_config* cfg) { delete cfg; }

mah_status mah_run_pipeline(const mah_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    mah::harness::run_pipeline(cfg->cfg);
  });
}

mah_status mah_run_phase(const mah_config* cfg, const char* phase) {
  return guarded([&] {
    need(cfg, "config");
    need(phase, "phase");
    const mah::harness::RunContext ctx(cfg->cfg);
    mah::harness::run_phase(ctx, phase);
  });
}

mah_status mah_gradcheck(uint64_t seed, double tolerance, mah_write_fn write, void* user,
                         int* passed) {
  return guarded([&] {
    const auto s = mah::harness::run_gradcheck(seed, tolerance);
    emit(write, user, s.to_text());
    if (passed != nullptr) *passed = s.passed ? 1 : 0;
  });
}

mah_status mah_cost_report(const char* decode_dir, mah_write_fn write, void* user,
                           int* passed) {
  return guarded([&] {
    need(decode_dir, "decode_dir");
    const auto r = mah::harness::run_cost_report(decode_dir);
    emit(write, user, r.to_text());
    if (passed != nullptr) *passed = r.passed ? 1 : 0;
  });
}

mah_status mah_cost_estimate(uint64_t x, uint64_t n, uint64_t k, uint64_t l,
                             uint64_t* cache_carry, uint64_t* re_encode) {
  return guarded([&] {
    const auto e = mah::decode::cost_estimate(x, n, k, l);
    if (cache_carry != nullptr) *cache_carry = e.cache_carry;
    if (re_encode != nullptr) *re_encode = e.re_encode;
  });
}

mah_status mah_policy_load(const char* path, mah_policy** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new mah_policy{mah::policy::load_policy(path)};
  });
}

int mah_policy_num_heads(const mah_policy* policy) {
  return policy == nullptr ? 0 : policy->model.num_heads();
}

mah_status mah_policy_generate(const mah_policy* policy, const char* prompt,
                               const double* weights, size_t num_weights, uint64_t seed,
                               size_t max_tokens, mah_write_fn write, void* user) {
  return guarded([&] {
    need(policy, "policy");
    need(prompt, "prompt");
    const auto& model = policy->model;
    const auto& tok = model.tokenizer();
    mah::decode::DecodeConfig cfg;
    cfg.k = 1;
    cfg.max_tokens = max_tokens;
    cfg.boundary = mah::decode::BoundaryCriteria::at_separator(
        tok.separator(), std::min<std::size_t>(max_tokens, 24));
    cfg.seed = seed;
    if (weights != nullptr) {
      cfg.source = mah::policy::HeadSource::ensemble(
          std::vector<double>(weights, weights + num_weights));
    } else if (model.num_heads() > 1) {
      cfg.source = mah::policy::HeadSource::ensemble(std::vector<double>(
          static_cast<std::size_t>(model.num_heads()), 1.0 / model.num_heads()));
    }
    const auto res = mah::decode::sample_plain(model, tok.encode_prompt(prompt), cfg);
    emit(write, user, res.text(tok));
  });
}

void mah_policy_free(mah_policy* policy) { delete policy; }

}  // extern "C"
