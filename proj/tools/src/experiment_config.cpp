#include "experiment_config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <limits>
#include <set>

#include "dirl/dataset.hpp"
#include "dirl/error.hpp"

namespace dirl::cli {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", where()));
  }

  bool has(const char* key) const { return j_.contains(key); }

  void read(const char* key, double& out) { visit(key, [&](const json& v, const std::string& f) {
    if (!v.is_number()) throw ConfigError(fmt::format("{}: expected a number", f));
    out = v.get<double>();
  }); }

  void read(const char* key, int& out) { visit(key, [&](const json& v, const std::string& f) {
    if (!v.is_number_integer()) throw ConfigError(fmt::format("{}: expected an integer", f));
    const auto n = v.get<std::int64_t>();
    if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) {
      throw ConfigError(fmt::format("{}: {} is out of range", f, n));
    }
    out = static_cast<int>(n);
  }); }

  void read(const char* key, std::uint64_t& out) { visit(key, [&](const json& v, const std::string& f) {
    if (v.is_number_unsigned()) {
      out = v.get<std::uint64_t>();
    } else if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
      out = static_cast<std::uint64_t>(v.get<std::int64_t>());
    } else {
      throw ConfigError(fmt::format("{}: expected a non-negative integer", f));
    }
  }); }

  void read(const char* key, bool& out) { visit(key, [&](const json& v, const std::string& f) {
    if (!v.is_boolean()) throw ConfigError(fmt::format("{}: expected true or false", f));
    out = v.get<bool>();
  }); }

  void read(const char* key, std::string& out) { visit(key, [&](const json& v, const std::string& f) {
    if (!v.is_string()) throw ConfigError(fmt::format("{}: expected a string", f));
    out = v.get<std::string>();
  }); }

  void read(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    read(key, s);
    out = s;
  }

  void read(const char* key, std::vector<double>& out) { visit(key, [&](const json& v, const std::string& f) {
    out = numbers(v, f);
  }); }

  void read(const char* key, std::vector<int>& out) { visit(key, [&](const json& v, const std::string& f) {
    if (!v.is_array()) throw ConfigError(fmt::format("{}: expected an array of integers", f));
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer()) throw ConfigError(fmt::format("{}[{}]: expected an integer", f, i));
      out.push_back(v[i].get<int>());
    }
  }); }

  void read(const char* key, std::vector<Eigen::VectorXd>& out) {
    visit(key, [&](const json& v, const std::string& f) {
      if (!v.is_array()) throw ConfigError(fmt::format("{}: expected an array of points", f));
      out.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto p = numbers(v[i], fmt::format("{}[{}]", f, i));
        out.push_back(Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
      }
    });
  }

  template <class F>
  void section(const char* key, F&& body) {
    if (!has(key)) return;
    seen_.insert(key);
    Reader child(j_.at(key), field(key));
    body(child);
    child.finish();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(fmt::format("{}: unknown key", field(key.c_str())));
    }
  }

 private:
  std::string where() const { return path_.empty() ? std::string("config") : path_; }
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class F>
  void visit(const char* key, F&& body) {
    if (!has(key)) return;
    seen_.insert(key);
    body(j_.at(key), field(key));
  }

  static std::vector<double> numbers(const json& v, const std::string& f) {
    if (!v.is_array()) throw ConfigError(fmt::format("{}: expected an array of numbers", f));
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(fmt::format("{}[{}]: expected a number", f, i));
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json points_json(const std::vector<Eigen::VectorXd>& pts) {
  json out = json::array();
  for (const auto& p : pts) out.push_back(std::vector<double>(p.data(), p.data() + p.size()));
  return out;
}

}  // namespace

void ExperimentConfig::resolve() {
  scenario.seed = seed;
  train.seed = seed;
  if (run_name.empty() || run_name.find('/') != std::string::npos || run_name == "." || run_name == "..") {
    throw ConfigError(fmt::format("run_name: '{}' is not a valid directory name", run_name));
  }
  scenario.validate();
  train.network.input_dim = scenario.dim();
  train.network.num_classes = scenario.num_classes();
  train.validate();
  if (grid.resolution < 2) throw ConfigError(fmt::format("grid.resolution: must be >= 2, got {}", grid.resolution));
  const auto& b = grid.bounds;
  if (!(b.x0_min < b.x0_max) || !(b.x1_min < b.x1_max)) {
    throw ConfigError("grid: bounds must satisfy min < max on both axes");
  }
}

ExperimentConfig parse_config(const json& root) {
  if (root.is_object() && root.contains("config") && root.contains("run_id")) {
    return parse_config(root.at("config"));
  }
  ExperimentConfig cfg;
  Reader r(root, "");
  r.read("seed", cfg.seed);
  r.read("output_dir", cfg.output_dir);
  r.read("run_name", cfg.run_name);
  r.read("data_dir", cfg.data_dir);

  r.section("scenario", [&](Reader& s) {
    auto& sc = cfg.scenario;
    std::string name(to_string(sc.scenario));
    s.read("name", name);
    sc.scenario = parse_scenario(name);
    s.read("source_means", sc.source_means);
    s.read("target_means", sc.target_means);
    s.read("sigma_sq", sc.sigma_sq);
    s.read("w_scale", sc.w_scale);
    s.read("n_source", sc.n_source);
    s.read("n_target", sc.n_target);
    s.read("n_target_test", sc.n_target_test);
    s.read("source_proportions", sc.source_proportions);
    s.read("target_proportions", sc.target_proportions);
    s.read("test_proportions", sc.test_proportions);
    s.read("label_shift_proportions", sc.label_shift_proportions);
  });

  r.section("train", [&](Reader& t) {
    auto& tc = cfg.train;
    std::string mode(to_string(tc.mode));
    t.read("mode", mode);
    tc.mode = parse_mode(mode);
    t.read("lr", tc.adam.lr);
    t.read("beta1", tc.adam.beta1);
    t.read("beta2", tc.adam.beta2);
    t.read("eps", tc.adam.eps);
    t.read("iterations", tc.iterations);
    t.read("batch_size", tc.batch_size);
    t.read("labeled_target_fraction", tc.labeled_target_fraction);
    t.read("k_shot", tc.k_shot);
    t.read("class_batch_per_class", tc.class_batch_per_class);
    t.read("target_labels_in_ce", tc.target_labels_in_ce);
    t.read("gradient_reversal", tc.gradient_reversal);
    t.read("disc_steps", tc.disc_steps);
    t.read("eval_every", tc.eval_every);
    t.read("probes_in_snapshots", tc.probes_in_snapshots);
    t.read("early_stop_patience", tc.early_stop_patience);
  });

  r.section("weights", [&](Reader& w) {
    w.read("ce", cfg.train.weights.ce);
    w.read("marginal", cfg.train.weights.marginal);
    w.read("conditional", cfg.train.weights.conditional);
    w.read("triplet", cfg.train.weights.triplet);
  });

  r.section("triplet", [&](Reader& t) {
    t.read("margin", cfg.train.triplet.margin);
    t.read("sigma_sq", cfg.train.triplet.sigma_sq);
  });

  r.section("pseudo", [&](Reader& p) {
    p.read("enabled", cfg.train.pseudo.enabled);
    p.read("warmup_iterations", cfg.train.pseudo.warmup_iterations);
    p.read("top_n_per_class", cfg.train.pseudo.top_n_per_class);
    p.read("refresh_every", cfg.train.pseudo.refresh_every);
  });

  r.section("network", [&](Reader& n) {
    n.read("feature_dim", cfg.train.network.feature_dim);
    n.read("extractor_hidden", cfg.train.network.extractor_hidden);
    n.read("head_hidden", cfg.train.network.head_hidden);
    n.read("relu_features", cfg.train.network.relu_features);
    n.read("disc_negative_slope", cfg.train.network.disc_negative_slope);
  });

  r.section("probe", [&](Reader& p) {
    p.read("steps", cfg.train.probe.steps);
    p.read("lr", cfg.train.probe.lr);
    p.read("batch_size", cfg.train.probe.batch_size);
    p.read("train_fraction", cfg.train.probe.train_fraction);
    p.read("max_per_domain", cfg.train.probe.max_per_domain);
    p.read("hidden", cfg.train.probe.hidden);
    p.read("seed", cfg.train.probe.seed);
  });

  r.section("grid", [&](Reader& g) {
    g.read("resolution", cfg.grid.resolution);
    g.read("x0_min", cfg.grid.bounds.x0_min);
    g.read("x0_max", cfg.grid.bounds.x0_max);
    g.read("x1_min", cfg.grid.bounds.x1_min);
    g.read("x1_max", cfg.grid.bounds.x1_max);
  });

  r.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read config file '{}'", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: not valid JSON ({})", path.string(), e.what()));
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  const auto& sc = c.scenario;
  const auto& t = c.train;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["run_name"] = c.run_name;
  j["data_dir"] = c.data_dir.string();
  j["scenario"] = {
      {"name", std::string(to_string(sc.scenario))},
      {"source_means", points_json(sc.source_means)},
      {"target_means", points_json(sc.target_means)},
      {"sigma_sq", sc.sigma_sq},
      {"w_scale", sc.w_scale},
      {"n_source", sc.n_source},
      {"n_target", sc.n_target},
      {"n_target_test", sc.n_target_test},
      {"source_proportions", sc.source_proportions},
      {"target_proportions", sc.target_proportions},
      {"test_proportions", sc.test_proportions},
      {"label_shift_proportions", sc.label_shift_proportions},
  };
  j["train"] = {
      {"mode", std::string(to_string(t.mode))},
      {"lr", t.adam.lr},
      {"beta1", t.adam.beta1},
      {"beta2", t.adam.beta2},
      {"eps", t.adam.eps},
      {"iterations", t.iterations},
      {"batch_size", t.batch_size},
      {"labeled_target_fraction", t.labeled_target_fraction},
      {"k_shot", t.k_shot},
      {"class_batch_per_class", t.class_batch_per_class},
      {"target_labels_in_ce", t.target_labels_in_ce},
      {"gradient_reversal", t.gradient_reversal},
      {"disc_steps", t.disc_steps},
      {"eval_every", t.eval_every},
      {"probes_in_snapshots", t.probes_in_snapshots},
      {"early_stop_patience", t.early_stop_patience},
  };
  j["weights"] = {{"ce", t.weights.ce},
                  {"marginal", t.weights.marginal},
                  {"conditional", t.weights.conditional},
                  {"triplet", t.weights.triplet}};
  j["triplet"] = {{"margin", t.triplet.margin}, {"sigma_sq", t.triplet.sigma_sq}};
  j["pseudo"] = {{"enabled", t.pseudo.enabled},
                 {"warmup_iterations", t.pseudo.warmup_iterations},
                 {"top_n_per_class", t.pseudo.top_n_per_class},
                 {"refresh_every", t.pseudo.refresh_every}};
  j["network"] = {{"feature_dim", t.network.feature_dim},
                  {"extractor_hidden", t.network.extractor_hidden},
                  {"head_hidden", t.network.head_hidden},
                  {"relu_features", t.network.relu_features},
                  {"disc_negative_slope", t.network.disc_negative_slope}};
  j["probe"] = {{"steps", t.probe.steps},
                {"lr", t.probe.lr},
                {"batch_size", t.probe.batch_size},
                {"train_fraction", t.probe.train_fraction},
                {"max_per_domain", t.probe.max_per_domain},
                {"hidden", t.probe.hidden},
                {"seed", t.probe.seed}};
  j["grid"] = {{"resolution", c.grid.resolution},
               {"x0_min", c.grid.bounds.x0_min},
               {"x0_max", c.grid.bounds.x0_max},
               {"x1_min", c.grid.bounds.x1_min},
               {"x1_max", c.grid.bounds.x1_max}};
  return j;
}

std::string run_id(const ExperimentConfig& cfg) {
  // Output paths do not change what is computed, so they are left out.
  json j = to_json(cfg);
  j.erase("output_dir");
  j.erase("run_name");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::uint64_t label_selection_seed(std::uint64_t seed) { return derive_seed(seed, 4); }

TrainingData load_or_generate_data(const ExperimentConfig& cfg) {
  DomainSplit split;
  if (cfg.data_dir.empty()) {
    split = generate_scenario(cfg.scenario);
  } else {
    const int k = cfg.scenario.num_classes();
    split.source = read_dataset_csv(cfg.data_dir / "source.csv", k, "source");
    split.target_train = read_dataset_csv(cfg.data_dir / "target_train.csv", k, "target_train");
    split.target_test = read_dataset_csv(cfg.data_dir / "target_test.csv", k, "target_test");
  }
  return prepare_training_data(std::move(split), cfg.train.k_shot, label_selection_seed(cfg.seed));
}

}  // namespace dirl::cli
