// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common/error.hpp"

namespace mah {

using Json = nlohmann::json;

inline void write_jsonl(const std::filesystem::path& path,
                        const std::vector<Json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      fail(ErrorCode::io, path.string() + ":" + std::to_string(lineno) +
                              ": " + e.what());
    }
  }
  return out;
}

}  // namespace mah
