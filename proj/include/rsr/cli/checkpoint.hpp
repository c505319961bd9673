// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint: "RSRCKPT\0", u32 version, u32 config length + config
// text, u32 tensor count, then per tensor u32 name length + name, u32 rank,
// u64 dims, f64 values (all little-endian), and a trailing FNV-1a 64 checksum
// of every preceding byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsr/numerics/nn.hpp"

namespace rsr::cli {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<StoredTensor> tensors;
};

std::uint64_t fnv1a64(const std::string& bytes);

std::string encode_checkpoint(const std::string& config_text, const ParamList& params);
/// Throws CheckpointError on bad magic, version, truncation or checksum.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParamList& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `params`; names and shapes must match exactly.
void apply_checkpoint(const Checkpoint& ckpt, const ParamList& params);

}  // namespace rsr::cli
