#include "commands.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <array>
#include <fstream>

#include "dirl/error.hpp"

namespace dirl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError(fmt::format("cannot write '{}'", p.string()));
  return out;
}

void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

fs::path prepare_run_dir(const ExperimentConfig& cfg, bool force) {
  const fs::path dir = cfg.output_dir / cfg.run_name;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw ConfigError(fmt::format("run directory '{}' already exists; pass --force to overwrite", dir.string()));
    }
    spdlog::warn("overwriting {}", dir.string());
    fs::remove_all(dir);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  return dir;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.17g}", *v) : std::string(); }

std::uint64_t combined_checksum(const TrainingData& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* ds : {&data.source, &data.target_train, &data.target_test}) {
    std::uint64_t c = dataset_checksum(*ds);
    for (int i = 0; i < 8; ++i) {
      h ^= (c >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

json datasets_json(const TrainingData& data) {
  json j;
  for (const auto* ds : {&data.source, &data.target_train, &data.target_test}) {
    j[ds->name] = {{"rows", ds->size()},
                   {"labeled", ds->labeled_indices().size()},
                   {"checksum", fmt::format("{:016x}", dataset_checksum(*ds))}};
  }
  j["combined_checksum"] = fmt::format("{:016x}", combined_checksum(data));
  return j;
}

json manifest_base(const ExperimentConfig& cfg, std::string_view kind) {
  return {{"kind", kind}, {"run_id", run_id(cfg)}, {"config", to_json(cfg)}};
}

void write_losses(const fs::path& p, const std::vector<StepRecord>& steps) {
  auto out = open_out(p);
  out << "iteration,ce,marginal_disc,marginal_gen,conditional_disc,conditional_gen,triplet,total,skipped_classes\n";
  for (const auto& s : steps) {
    out << fmt::format("{},{},{},{},{},{},{},{:.17g},{}\n", s.iteration, cell(s.ce), cell(s.marginal_disc),
                       cell(s.marginal_gen), cell(s.conditional_disc), cell(s.conditional_gen), cell(s.triplet),
                       s.total, fmt::join(s.skipped_classes, ";"));
  }
}

json diagnostic_json(const AbortDiagnostic& d) {
  json norms = json::object();
  for (const auto& [name, value] : d.parameter_norms) norms[name] = value;
  return {{"iteration", d.iteration}, {"term", d.term}, {"message", d.message}, {"parameter_norms", norms}};
}

}  // namespace

ExperimentConfig build_config(const Overrides& o) {
  ExperimentConfig cfg = o.config ? load_config(*o.config) : ExperimentConfig{};
  if (o.seed) cfg.seed = *o.seed;
  if (o.mode) cfg.train.mode = parse_mode(*o.mode);
  if (o.out) cfg.output_dir = *o.out;
  if (o.run_name) cfg.run_name = *o.run_name;
  cfg.resolve();
  return cfg;
}

json snapshot_json(const EvalSnapshot& s) {
  json recall = json::array();
  for (const auto& r : s.target_recall) recall.push_back(opt(r));
  json j = {{"iteration", s.iteration},
            {"target_accuracy", s.target_accuracy},
            {"source_accuracy", s.source_accuracy},
            {"silhouette", s.silhouette},
            {"silhouette_source", s.silhouette_source},
            {"silhouette_target", s.silhouette_target},
            {"target_recall", recall},
            {"marginal_probe", opt(s.marginal_probe)}};
  if (s.conditional_probe) {
    json per = json::array();
    for (const auto& c : s.conditional_probe->per_class) per.push_back(opt(c));
    j["conditional_probe"] = {{"per_class", per}, {"mean", opt(s.conditional_probe->mean)}};
  } else {
    j["conditional_probe"] = nullptr;
  }
  return j;
}

fs::path cmd_gen_data(const ExperimentConfig& cfg, bool force) {
  const DomainSplit split = generate_scenario(cfg.scenario);
  const fs::path dir = prepare_run_dir(cfg, force);
  write_dataset_csv(split.source, dir / "source.csv");
  write_dataset_csv(split.target_train, dir / "target_train.csv");
  write_dataset_csv(split.target_test, dir / "target_test.csv");

  json m = manifest_base(cfg, "gen-data");
  for (const auto* ds : {&split.source, &split.target_train, &split.target_test}) {
    m["datasets"][ds->name] = {{"rows", ds->size()}, {"checksum", fmt::format("{:016x}", dataset_checksum(*ds))}};
  }
  write_json(dir / "manifest.json", m);
  spdlog::info("wrote {} + {} + {} rows to {}", split.source.size(), split.target_train.size(),
               split.target_test.size(), dir.string());
  return dir;
}

fs::path cmd_train(const ExperimentConfig& cfg, bool force) {
  const TrainingData data = load_or_generate_data(cfg);
  const fs::path dir = prepare_run_dir(cfg, force);
  fs::create_directories(dir / "checkpoints");

  json m = manifest_base(cfg, "train");
  m["datasets"] = datasets_json(data);
  m["status"] = "running";
  write_json(dir / "manifest.json", m);

  auto metrics = open_out(dir / "metrics.jsonl");
  const auto on_snapshot = [&](const EvalSnapshot& s, const ModelBundle& bundle) {
    metrics << snapshot_json(s).dump() << '\n';
    metrics.flush();
    save_checkpoint(bundle, dir / "checkpoints" / fmt::format("iter_{:06d}.ckpt", s.iteration));
    spdlog::info("[{}] iter {} target_acc {:.4f} source_acc {:.4f}", to_string(cfg.train.mode), s.iteration,
                 s.target_accuracy, s.source_accuracy);
  };

  std::pair<ModelBundle, RunReport> result;
  try {
    result = run_training(data, cfg.train, on_snapshot);
  } catch (const TrainingAborted& e) {
    write_json(dir / "diagnostic.json", diagnostic_json(e.diagnostic()));
    m["status"] = "aborted";
    m["abort"] = diagnostic_json(e.diagnostic());
    write_json(dir / "manifest.json", m);
    throw;
  }
  const auto& [bundle, report] = result;

  write_losses(dir / "losses.csv", report.steps);
  save_checkpoint(bundle, dir / "model.ckpt");
  const std::array<const DomainDataset*, 3> sets = {&data.source, &data.target_truth, &data.target_test};
  export_embeddings(bundle, sets, dir / "embeddings.csv");
  if (bundle.spec.input_dim == 2) {
    write_grid_csv(decision_grid(bundle, cfg.grid.bounds, cfg.grid.resolution), dir / "grid.csv");
  } else {
    spdlog::info("skipping grid.csv for {}-dimensional inputs", bundle.spec.input_dim);
  }

  m["status"] = "completed";
  m["iterations_run"] = report.iterations_run;
  m["early_stopped"] = report.early_stopped;
  m["empty_pseudo_classes"] = report.empty_pseudo_classes;
  m["final_metrics"] = snapshot_json(report.final_metrics);
  write_json(dir / "manifest.json", m);
  spdlog::info("final target accuracy {:.4f}; run written to {}", report.final_metrics.target_accuracy,
               dir.string());
  return dir;
}

CompareOutcome cmd_compare(const ExperimentConfig& cfg, bool force) {
  const TrainingData data = load_or_generate_data(cfg);
  const fs::path dir = prepare_run_dir(cfg, force);
  const int k = cfg.scenario.num_classes();
  const std::string checksum = fmt::format("{:016x}", combined_checksum(data));

  CompareOutcome outcome{dir / "compare.csv", 0};
  auto table = open_out(outcome.table);
  table << "mode,status,target_accuracy,source_accuracy,silhouette,marginal_probe,conditional_probe_mean";
  for (int c = 0; c < k; ++c) table << fmt::format(",conditional_probe_c{}", c);
  table << ",dataset_checksum\n";

  json m = manifest_base(cfg, "compare");
  m["datasets"] = datasets_json(data);
  for (auto mode : {TrainMode::source_only, TrainMode::marginal_only, TrainMode::triplet_only, TrainMode::dirl}) {
    TrainConfig tc = cfg.train;
    tc.mode = mode;
    const std::string name(to_string(mode));
    try {
      const auto report = run_training(data, tc).second;
      const auto& f = report.final_metrics;
      table << fmt::format("{},ok,{:.17g},{:.17g},{:.17g},{},{}", name, f.target_accuracy, f.source_accuracy,
                           f.silhouette, cell(f.marginal_probe),
                           cell(f.conditional_probe ? f.conditional_probe->mean : std::nullopt));
      for (int c = 0; c < k; ++c) {
        std::optional<double> v;
        if (f.conditional_probe) v = f.conditional_probe->per_class[static_cast<std::size_t>(c)];
        table << ',' << cell(v);
      }
      m["results"][name] = snapshot_json(f);
      spdlog::info("{}: target accuracy {:.4f}", name, f.target_accuracy);
    } catch (const Error& e) {
      ++outcome.failures;
      table << name << ",failed,,,,,";
      for (int c = 0; c < k; ++c) table << ',';
      m["results"][name] = {{"error", e.what()}};
      spdlog::error("{} failed: {}", name, e.what());
    }
    table << ',' << checksum << '\n';
    table.flush();
  }
  m["failures"] = outcome.failures;
  write_json(dir / "manifest.json", m);
  return outcome;
}

json cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw IoError(fmt::format("checkpoint '{}' not found", checkpoint.string()));
  const ModelBundle bundle = load_checkpoint(checkpoint);
  const TrainingData data = load_or_generate_data(cfg);
  if (bundle.spec.input_dim != data.source.dim() || bundle.num_classes() != data.source.num_classes) {
    throw ConfigError(fmt::format("checkpoint expects {} inputs and {} classes, data has {} and {}",
                                  bundle.spec.input_dim, bundle.num_classes(), data.source.dim(),
                                  data.source.num_classes));
  }
  json j = snapshot_json(evaluate_snapshot(bundle, data, cfg.train, 0, true));
  j.erase("iteration");
  j["checkpoint"] = checkpoint.string();
  return j;
}

}  // namespace dirl::cli
