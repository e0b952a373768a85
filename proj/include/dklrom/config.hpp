#pragma once

// JSON form of every run configuration, and named presets. Reading merges
// onto existing values, so a file only needs the keys it changes; unknown
// keys are rejected.

#include "dklrom/simulators.hpp"
#include "dklrom/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace dklrom {

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossWeights& w);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const sim::GenerationConfig& c);

// Throw ConfigError naming the offending key on unknown keys or wrong types.
void merge(ModelConfig& c, const nlohmann::json& j);
void merge(LossWeights& w, const nlohmann::json& j);
void merge(TrainConfig& c, const nlohmann::json& j);
void merge(sim::GenerationConfig& c, const nlohmann::json& j);

/// Everything a run needs: data generation sizes and the training setup.
struct RunPreset {
  std::string name;
  sim::GenerationConfig generation;
  Index trajectories = 0;
  Index steps = 0;
  TrainConfig train;
};

nlohmann::json to_json(const RunPreset& p);
void merge(RunPreset& p, const nlohmann::json& j);

/// "full-pendulum", "full-rd", "desk-pendulum", "desk-rd" or "tiny".
RunPreset preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace dklrom
