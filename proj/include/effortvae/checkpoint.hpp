// SPDX-License-Identifier: Apache-2.0
//
// Versioned parameter checkpoints. `<stem>.bin` holds the tensors:
//
//   "EVCK" | u32 version | u32 tensor_count
//   per tensor: u32 name_len | name | u32 ndims (=2) | u64 rows | u64 cols | u64 offset
//   data: little-endian f64, column-major, `offset` bytes from the start of the data block
//
// `<stem>.json` is the manifest (hyperparameters, RNG state, optimizer step...).
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "effortvae/diff.hpp"

namespace effortvae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    diff::Matrix value;
};

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

struct Checkpoint {
    diff::ParameterStore params;
    std::optional<diff::AdamState> optimizer;
    nlohmann::json manifest = nlohmann::json::object();
};

/// Writes `<stem>.bin` and `<stem>.json`. Returns the SHA-256 of the .bin file.
std::string save_checkpoint(const std::filesystem::path& stem, const diff::ParameterStore& params,
                            const diff::AdamState* optimizer, nlohmann::json manifest);

/// Reads a checkpoint into `params` (names and shapes must match) and returns the
/// manifest plus optimizer state when present.
Checkpoint load_checkpoint(const std::filesystem::path& stem, const diff::ParameterStore& like);

std::filesystem::path checkpoint_tensor_path(const std::filesystem::path& stem);
std::filesystem::path checkpoint_manifest_path(const std::filesystem::path& stem);

/// Hex SHA-256 of a byte string / file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace effortvae
