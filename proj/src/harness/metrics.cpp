// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "harness/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/fmt/fmt.h>

#include "common/error.hpp"

namespace mah::harness {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

}  // namespace

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot read metrics " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    fail(ErrorCode::io, path.string() + ": unexpected metrics header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto f = split_csv(line);
    auto bad = [&](const std::string& why) {
      fail(ErrorCode::io, path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != 5) bad("expected 5 fields");
    MetricsRow r{f[0], f[1], f[2], 0.0, 0};
    if (r.run_id.empty() || r.phase.empty() || r.metric.empty()) bad("empty field");
    auto [p, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), r.value);
    if (ec != std::errc() || p != f[3].data() + f[3].size() || !std::isfinite(r.value))
      bad("value is not a finite number");
    auto [q, ec2] = std::from_chars(f[4].data(), f[4].data() + f[4].size(), r.seed);
    if (ec2 != std::errc() || q != f[4].data() + f[4].size()) bad("bad seed");
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_metrics(const std::filesystem::path& path,
                   const std::vector<MetricsRow>& rows) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write metrics " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    if (!std::isfinite(r.value))
      fail(ErrorCode::numeric, "metric " + r.phase + "/" + r.metric + " is not finite");
    out << r.run_id << ',' << r.phase << ',' << r.metric << ','
        << fmt::format("{}", r.value) << ',' << r.seed << '\n';
  }
}

void upsert_metrics(const std::filesystem::path& path, const std::string& phase,
                    const std::vector<MetricsRow>& rows) {
  std::vector<MetricsRow> all;
  if (std::filesystem::exists(path))
    for (auto& r : read_metrics(path))
      if (r.phase != phase) all.push_back(std::move(r));
  all.insert(all.end(), rows.begin(), rows.end());
  write_metrics(path, all);
}

void record_timing(const std::filesystem::path& path, const std::string& run_id,
                   const std::string& phase, double seconds) {
  std::vector<std::string> kept;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto f = split_csv(line);
      if (f.size() == 3 && f[1] != phase) kept.push_back(line);
    }
  }
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write timings " + path.string());
  out << kTimingsHeader << '\n';
  for (const auto& l : kept) out << l << '\n';
  out << run_id << ',' << phase << ',' << fmt::format("{:.3f}", seconds) << '\n';
}

}  // namespace mah::harness
