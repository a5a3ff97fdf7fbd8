#pragma once

// Checkpoint container (JSON, format "prism-checkpoint", version 1):
//   {"format": "prism-checkpoint", "version": 1,
//    "shape": {"vocab", "embed_dim", "hidden_dim", "window", "begin_token"},
//    "params": {"embedding": [...], "w_hidden": [...], "b_hidden": [...],
//               "w_out": [...], "b_out": [...]},
//    "optimizer": {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay",
//                  "step", "first_moment": {...}, "second_moment": {...}},
//    "seed": n, "config_hash": "16 hex digits",
//    "config": {"key": "value", ...}}
// Doubles are written in shortest round-trip form, so save/load is exact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "prism/toy_model.hpp"

namespace prism {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  OptimizerState optimizer;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> config;

  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws IoError on malformed content or a version mismatch.
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace prism
