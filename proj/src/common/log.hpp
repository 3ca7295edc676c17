// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <spdlog/spdlog.h>

namespace mah {

// Reads MAH_LOG_LEVEL (trace, debug, info, warn, error, off) once.
void init_logging();

}  // namespace mah
