#pragma once

#include <optional>
#include <string>

#include "dfm/model.hpp"
#include "dfm/optimizer.hpp"

namespace dfm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): "DFMCKPT\0", u32 version, u32 + descriptor,
// u32 + tag, u64 n, n x f64 params, u8 has_optimizer [optimizer block],
// u64 FNV-1a checksum of all preceding bytes.
struct Checkpoint {
  PosteriorModel model;
  std::optional<OptimizerState> optimizer;
  std::string tag;  // free-form metadata, e.g. the run config hash
};

void checkpoint_save(const std::string& path, const PosteriorModel& model,
                     const OptimizerState* optimizer = nullptr, const std::string& tag = "");

Checkpoint checkpoint_load(const std::string& path);
// Also rejects checkpoints whose architecture differs from `expected`.
Checkpoint checkpoint_load(const std::string& path, const ModelSpec& expected);
Checkpoint checkpoint_load(const std::string& path, const StateSpace& expected_space);

}  // namespace dfm
