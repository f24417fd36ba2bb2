#include <CLI11.hpp>
#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "commands.hpp"
#include "dirl/error.hpp"

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("dirl");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("DIRL_KIT_LOG")) spdlog::cfg::helpers::load_levels(env);
}

void add_common(CLI::App* cmd, dirl::cli::Overrides& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--run-name", o.run_name, "Run directory name under --out");
  cmd->add_flag("--force", o.force, "Overwrite an existing run directory");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  using namespace dirl::cli;

  CLI::App app{"Domain-invariant representation learning on synthetic two-domain data"};
  app.require_subcommand(1);
  Overrides o;
  std::filesystem::path checkpoint;

  auto* gen = app.add_subcommand("gen-data", "Generate the source, target and test datasets");
  add_common(gen, o);
  auto* train = app.add_subcommand("train", "Train one model");
  add_common(train, o);
  train->add_option("--mode", o.mode, "source_only, marginal_only, triplet_only or dirl");
  auto* compare = app.add_subcommand("compare", "Train all four modes on the same data");
  add_common(compare, o);
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--config", o.config, "JSON config file or run manifest");
  eval->add_option("--seed", o.seed, "Run seed");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    const ExperimentConfig cfg = build_config(o);
    if (gen->parsed()) {
      std::cout << cmd_gen_data(cfg, o.force).string() << '\n';
    } else if (train->parsed()) {
      std::cout << cmd_train(cfg, o.force).string() << '\n';
    } else if (compare->parsed()) {
      const auto outcome = cmd_compare(cfg, o.force);
      std::cout << outcome.table.string() << '\n';
      if (outcome.failures > 0) {
        spdlog::error("{} of 4 modes failed", outcome.failures);
        return kRuntimeFailure;
      }
    } else if (eval->parsed()) {
      std::cout << cmd_eval(cfg, checkpoint).dump(2) << '\n';
    }
  } catch (const dirl::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsageError;
  } catch (const dirl::IoError& e) {
    spdlog::error("{}", e.what());
    return o.config && !std::filesystem::exists(*o.config) ? kUsageError : kRuntimeFailure;
  } catch (const dirl::TrainingAborted& e) {
    spdlog::error("training aborted at iteration {} in {}: {}", e.diagnostic().iteration, e.diagnostic().term,
                  e.diagnostic().message);
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeFailure;
  }
  return 0;
}
