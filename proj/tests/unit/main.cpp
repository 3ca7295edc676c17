// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "common/log.hpp"

int main(int argc, char** argv) {
  mah::init_logging();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
