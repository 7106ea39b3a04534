#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "optctl/trainer.hpp"

namespace optctl {

/// Binary checkpoint layout (all integers and doubles little-endian):
///
///   "OPTCTLCK"            8 bytes
///   version               u32 (currently 1)
///   model hash            u64 (TrainConfig::model_hash)
///   kind                  u32
///   epoch                 i64
///   config text           u64 length + bytes
///   controls, omega, bias matrices: u64 rows, u64 cols, doubles column-major
///   has optimizer         u8; if 1, per group: i64 step, m matrix, v matrix
struct Checkpoint {
  ModelParameters params;
  std::optional<OptimizerState> optimizer;
  std::int64_t epoch = 0;
  std::string config_text;
  std::uint64_t model_hash = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Reads a checkpoint; throws ParseError on a malformed file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Reads a checkpoint and throws ConfigError unless its model hash equals
/// `config.model_hash()`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig& config);

Checkpoint make_checkpoint(const TrainConfig& config, const ModelParameters& params,
                           const OptimizerState* optimizer, std::int64_t epoch);

}  // namespace optctl
