// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint container (little-endian):
//
//   magic "MAHCKPT\0" | u32 version | str kind | 6 x i64 dims | str alphabet
//   | u32 n_meta { str key, str value } | u32 n_arrays { str name, u32 rank,
//   rank x u64 dims, numel x f64 } | u32 crc32 over all preceding bytes
//
// `str` is a u32 length followed by raw bytes.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "policy/model.hpp"

namespace mah::policy {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  ModelDims dims;
  std::string alphabet;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, numcore::Tensor>> arrays;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws Error(checksum) when the stored checksum does not match the content.
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_policy(const std::filesystem::path& path, const PolicyModel& model);
PolicyModel load_policy(const std::filesystem::path& path);

}  // namespace mah::policy
