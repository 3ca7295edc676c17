// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// metrics.csv: run_id,phase,metric,value,seed. Wall-clock durations go to a
// separate timings.csv so the metrics file stays byte-reproducible.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mah::harness {

struct MetricsRow {
  std::string run_id;
  std::string phase;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kMetricsHeader = "run_id,phase,metric,value,seed";
inline constexpr const char* kTimingsHeader = "run_id,phase,wall_clock_s";

/// Strict reader: exact header, five fields per row, finite values.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);
void write_metrics(const std::filesystem::path& path,
                   const std::vector<MetricsRow>& rows);

/// Replaces every row of `phase` (keeping other phases in place) and appends
/// `rows` after them.
void upsert_metrics(const std::filesystem::path& path, const std::string& phase,
                    const std::vector<MetricsRow>& rows);

void record_timing(const std::filesystem::path& path, const std::string& run_id,
                   const std::string& phase, double seconds);

}  // namespace mah::harness
