#pragma once

// Single-file binary checkpoints: "UPGCKPT\0" magic, a format version, then
// the training step, run seed, policy parameters and optimizer state, all
// little-endian. Every random stream in a run is derived from (seed, step,
// ...), so the seed and step together are the complete RNG state.

#include <cstdint>
#include <iosfwd>
#include <string>

#include "upg/optimizer.hpp"
#include "upg/policy.hpp"

namespace upg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  PolicyParams params;
  OptimizerConfig optimizer;
  OptimizerState optimizer_state;
};

void write_checkpoint(std::ostream& os, const CheckpointRecord& rec);
// Throws DataError on a bad magic, unknown version, or truncated file.
CheckpointRecord read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const CheckpointRecord& rec);
CheckpointRecord load_checkpoint(const std::string& path);

}  // namespace upg
