// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <string>

#include <doctest.h>

#include "helpers.hpp"
#include "mahalign/mahalign.h"
#include "policy/checkpoint.hpp"

namespace {

void append(const char* data, size_t size, void* user) {
  static_cast<std::string*>(user)->append(data, size);
}

}  // namespace

TEST_CASE("C API reports status codes and messages") {
  mah_config* cfg = nullptr;
  CHECK(mah_config_parse("bogus=1\n", &cfg) == MAH_INVALID_ARGUMENT);
  CHECK(cfg == nullptr);
  CHECK(std::string(mah_last_error()).find("bogus") != std::string::npos);
  CHECK(mah_config_load("/nonexistent/cfg.txt", &cfg) == MAH_IO);
  CHECK(mah_config_default(nullptr) == MAH_INVALID_ARGUMENT);
  CHECK(std::string(mah_status_name(MAH_CHECKSUM)) == "checksum mismatch");
  CHECK(std::string(mah_version()).size() > 0);
}

TEST_CASE("C API configuration handles") {
  mah_config* cfg = nullptr;
  REQUIRE(mah_config_default(&cfg) == MAH_OK);
  CHECK(mah_config_set(cfg, "run.seed", "42") == MAH_OK);
  CHECK(mah_config_set(cfg, "run.nope", "1") == MAH_INVALID_ARGUMENT);
  CHECK(mah_config_validate(cfg) == MAH_OK);
  std::string text;
  CHECK(mah_config_write(cfg, append, &text) == MAH_OK);
  CHECK(text.find("run.seed=42\n") != std::string::npos);
  mah_config* again = nullptr;
  REQUIRE(mah_config_parse(text.c_str(), &again) == MAH_OK);
  std::string text2;
  mah_config_write(again, append, &text2);
  CHECK(text == text2);
  CHECK(mah_run_phase(cfg, "bogus") == MAH_INVALID_ARGUMENT);
  mah_config_free(again);
  mah_config_free(cfg);
  mah_config_free(nullptr);
}

TEST_CASE("C API cost estimate") {
  uint64_t cc = 0, re = 0;
  CHECK(mah_cost_estimate(100, 10, 5, 20, &cc, &re) == MAH_OK);
  CHECK(cc == 1100);
  CHECK(re == 10500);
}

TEST_CASE("C API policy handles load, generate and detect corruption") {
  mah::test::TempDir dir("capi");
  const auto path = dir.path() / "p.ckpt";
  mah::policy::save_policy(path, mah::test::tiny_policy(41, 2));
  mah_policy* p = nullptr;
  REQUIRE(mah_policy_load(path.c_str(), &p) == MAH_OK);
  CHECK(mah_policy_num_heads(p) == 2);
  std::string a, b;
  const double w[2] = {0.5, 0.5};
  CHECK(mah_policy_generate(p, "1+2:", w, 2, 7, 30, append, &a) == MAH_OK);
  CHECK(mah_policy_generate(p, "1+2:", nullptr, 0, 7, 30, append, &b) == MAH_OK);
  CHECK(a == b);
  const double bad[2] = {0.9, 0.9};
  CHECK(mah_policy_generate(p, "1+2:", bad, 2, 7, 30, append, &a) == MAH_INVALID_ARGUMENT);
  CHECK(mah_policy_generate(p, "x", nullptr, 0, 7, 30, append, &a) == MAH_INVALID_ARGUMENT);
  mah_policy_free(p);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(120);
    char c = 0;
    f.read(&c, 1);
    f.seekp(120);
    f.put(static_cast<char>(c ^ 0x21));
  }
  mah_policy* q = nullptr;
  CHECK(mah_policy_load(path.c_str(), &q) == MAH_CHECKSUM);
  CHECK(q == nullptr);
}
