// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "common/log.hpp"

#include <cstdlib>
#include <mutex>

namespace mah {

void init_logging() {
  static std::once_flag once;
  std::call_once(once, [] {
    spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
    const char* env = std::getenv("MAH_LOG_LEVEL");
    spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
  });
}

}  // namespace mah
