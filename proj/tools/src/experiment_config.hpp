#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dirl/evaluation.hpp"
#include "dirl/synthetic_data.hpp"
#include "dirl/trainer.hpp"

namespace dirl::cli {

struct GridConfig {
  int resolution = 101;
  GridBounds bounds;
};

/// Everything one invocation needs. `seed` drives data generation, label
/// selection, initialization and batching.
struct ExperimentConfig {
  ScenarioConfig scenario;
  TrainConfig train;
  GridConfig grid;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  std::string run_name = "run";
  /// Directory with source.csv, target_train.csv and target_test.csv; empty
  /// means generate the data from `scenario`.
  std::filesystem::path data_dir;

  /// Propagates `seed` and the scenario's dimensions into the sub-configs and
  /// validates every field. Throws ConfigError.
  void resolve();
};

/// Parses a config object. Missing keys keep their defaults; unknown keys and
/// wrongly typed values raise ConfigError naming the field. A run manifest
/// is accepted as well, through its "config" member.
ExperimentConfig parse_config(const nlohmann::json& j);
/// Reads and parses `path`. A missing or unreadable file raises IoError.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Resolved config as JSON; parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// 16 hex digits identifying the resolved config.
std::string run_id(const ExperimentConfig& cfg);

/// Loads data_dir when set, otherwise generates the scenario, then masks
/// target labels down to k_shot per class.
TrainingData load_or_generate_data(const ExperimentConfig& cfg);

/// Seed for choosing which target labels stay visible.
std::uint64_t label_selection_seed(std::uint64_t seed);

}  // namespace dirl::cli
