#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "experiment_config.hpp"

namespace dirl::cli {

/// Command line values that win over the config file.
struct Overrides {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> run_name;
  bool force = false;
};

/// Loads the config file (defaults when none is given), applies overrides,
/// then resolves it.
ExperimentConfig build_config(const Overrides& o);

nlohmann::json snapshot_json(const EvalSnapshot& s);

/// Writes source.csv, target_train.csv, target_test.csv and manifest.json
/// under <out>/<run_name>/. Returns the run directory.
std::filesystem::path cmd_gen_data(const ExperimentConfig& cfg, bool force);

/// Trains one model. The run directory gets manifest.json, losses.csv,
/// metrics.jsonl, checkpoints/, model.ckpt, embeddings.csv and grid.csv (2D
/// inputs only). On abort diagnostic.json is written and TrainingAborted
/// propagates.
std::filesystem::path cmd_train(const ExperimentConfig& cfg, bool force);

struct CompareOutcome {
  std::filesystem::path table;
  int failures = 0;
};

/// Runs all four modes on the same data and seed and writes compare.csv.
/// Failed modes keep a row with status "failed" and empty metrics.
CompareOutcome cmd_compare(const ExperimentConfig& cfg, bool force);

/// Evaluates a checkpoint on the config's data, probes included.
nlohmann::json cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint);

}  // namespace dirl::cli
