#pragma once

// Model checkpoints: a directory with `manifest.json` (format version, config,
// fingerprint, per-tensor shape and checksum) and one float32 array file per
// parameter.

#include "dklrom/models.hpp"
#include "dklrom/training.hpp"

#include <filesystem>
#include <optional>

namespace dklrom {

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const ModelBundle<float>& bundle, const std::filesystem::path& dir,
                     const std::optional<TrainConfig>& train = std::nullopt);

struct Checkpoint {
  ModelBundle<float> bundle;
  std::optional<TrainConfig> train;
};

/// Throws FormatError on damaged files and ConfigError when `expected` is given
/// and its fingerprint differs from the stored one.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig* expected = nullptr);

}  // namespace dklrom
