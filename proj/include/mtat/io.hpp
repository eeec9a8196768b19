// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "mtat/tensor.hpp"

namespace mtat::io {

// Binary tensor container (little-endian):
//   "MTAT" | u32 rank | u64 extents[rank] | f64 data[numel]
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// JSON text form for small fixtures: {"shape": [...], "data": [...]}
nlohmann::json to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

using NamedTensors = std::map<std::string, Tensor>;

// Checkpoint: "MTCK" | u32 count | count × (u32 name_len | name | tensor container)
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);

/// Shortest round-trip decimal form; locale independent.
std::string format_double(double v);

}  // namespace mtat::io
