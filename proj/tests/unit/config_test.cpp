#include <gtest/gtest.h>

#include "commands.hpp"
#include "dirl/error.hpp"
#include "experiment_config.hpp"

using namespace dirl;
using namespace dirl::cli;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    auto cfg = parse_config(j);
    cfg.resolve();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(ParseConfig, EmptyObjectGivesDefaults) {
  auto cfg = parse_config(json::object());
  cfg.resolve();
  EXPECT_EQ(cfg.train.iterations, 10000);
  EXPECT_EQ(cfg.train.batch_size, 80);
  EXPECT_EQ(cfg.scenario.n_source, 2000);
  EXPECT_EQ(cfg.run_name, "run");
}

TEST(ParseConfig, ReadsEverySection) {
  const json j = json::parse(R"({
    "seed": 7,
    "scenario": {"name": "label_shift", "label_shift_proportions": [0.7, 0.3], "sigma_sq": 0.2},
    "train": {"mode": "triplet_only", "lr": 0.001, "iterations": 50, "eval_every": 25, "k_shot": 3},
    "weights": {"triplet": 0.5},
    "triplet": {"margin": 0.25},
    "pseudo": {"enabled": true, "warmup_iterations": 10},
    "network": {"feature_dim": 4, "head_hidden": [5]},
    "probe": {"steps": 10},
    "grid": {"resolution": 11}
  })");
  auto cfg = parse_config(j);
  cfg.resolve();
  EXPECT_EQ(cfg.scenario.scenario, Scenario::label_shift);
  EXPECT_EQ(cfg.scenario.seed, 7u);
  EXPECT_EQ(cfg.train.seed, 7u);
  EXPECT_EQ(cfg.train.mode, TrainMode::triplet_only);
  EXPECT_EQ(cfg.train.adam.lr, 0.001);
  EXPECT_EQ(cfg.train.k_shot, 3);
  EXPECT_EQ(cfg.train.weights.triplet, 0.5);
  EXPECT_EQ(cfg.train.triplet.margin, 0.25);
  EXPECT_TRUE(cfg.train.pseudo.enabled);
  EXPECT_EQ(cfg.train.network.head_hidden, (std::vector<int>{5}));
  EXPECT_EQ(cfg.train.probe.steps, 10);
  EXPECT_EQ(cfg.grid.resolution, 11);
}

TEST(ParseConfig, UnknownKeysAreRejectedByPath) {
  EXPECT_EQ(config_error(json::parse(R"({"trian": {}})")), "trian: unknown key");
  EXPECT_EQ(config_error(json::parse(R"({"train": {"itrations": 3}})")), "train.itrations: unknown key");
}

TEST(ParseConfig, WrongTypesNameTheField) {
  EXPECT_NE(config_error(json::parse(R"({"train": {"iterations": "many"}})")).find("train.iterations"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"train": {"iterations": 2.5}})")).find("train.iterations"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"seed": -1})")).find("seed"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"scenario": {"source_means": [[1, "a"]]}})")).find("scenario.source_means[0][1]"),
            std::string::npos);
}

TEST(ParseConfig, RangeChecksRunBeforeTraining) {
  EXPECT_NE(config_error(json::parse(R"({"train": {"batch_size": 81}})")).find("batch_size"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"train": {"mode": "both"}})")).find("both"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"run_name": "a/b"})")).find("run_name"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"grid": {"resolution": 1}})")).find("grid.resolution"), std::string::npos);
}

TEST(ParseConfig, JsonRoundTrip) {
  const json j = json::parse(R"({"seed": 3, "train": {"mode": "marginal_only", "k_shot": 1}, "scenario": {"name": "label_swap"}})");
  auto a = parse_config(j);
  a.resolve();
  auto b = parse_config(to_json(a));
  b.resolve();
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(run_id(a), run_id(b));
}

TEST(ParseConfig, ManifestIsAccepted) {
  auto a = parse_config(json::parse(R"({"seed": 9})"));
  a.resolve();
  const json manifest = {{"kind", "train"}, {"run_id", run_id(a)}, {"config", to_json(a)}};
  auto b = parse_config(manifest);
  b.resolve();
  EXPECT_EQ(b.seed, 9u);
}

TEST(RunId, DependsOnComputationNotOutputPath) {
  ExperimentConfig a;
  a.resolve();
  ExperimentConfig b = a;
  b.run_name = "elsewhere";
  b.output_dir = "/tmp/other";
  EXPECT_EQ(run_id(a), run_id(b));
  b.seed = 1;
  b.resolve();
  EXPECT_NE(run_id(a), run_id(b));
  EXPECT_EQ(run_id(a).size(), 16u);
}

TEST(LoadConfig, MissingFileIsIoErrorNamingPath) {
  try {
    load_config("/no/such/config.json");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/no/such/config.json"), std::string::npos);
  }
}

TEST(BuildConfig, FlagsWin) {
  Overrides o;
  o.seed = 11;
  o.mode = "source_only";
  o.out = "/tmp/x";
  const auto cfg = build_config(o);
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.train.seed, 11u);
  EXPECT_EQ(cfg.train.mode, TrainMode::source_only);
  EXPECT_EQ(cfg.output_dir, "/tmp/x");
}
