#include "dirl/synthetic_data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dirl/error.hpp"

namespace dirl {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::base:
      return "base";
    case Scenario::label_swap:
      return "label_swap";
    case Scenario::label_shift:
      return "label_shift";
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view s) {
  if (s == "base") return Scenario::base;
  if (s == "label_swap") return Scenario::label_swap;
  if (s == "label_shift") return Scenario::label_shift;
  throw ConfigError(fmt::format("unknown scenario '{}' (expected base, label_swap, label_shift)", s));
}

int ScenarioConfig::dim() const {
  return source_means.empty() ? 0 : static_cast<int>(source_means.front().size());
}

namespace {

void check_simplex(std::span<const double> p, int k, const char* field) {
  if (static_cast<int>(p.size()) != k) {
    throw ConfigError(fmt::format("{}: expected {} entries, got {}", field, k, p.size()));
  }
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ConfigError(fmt::format("{}: entries must be non-negative", field));
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError(fmt::format("{}: entries sum to {:.15g}, expected 1", field, total));
  }
}

}  // namespace

void ScenarioConfig::validate() const {
  const int k = num_classes();
  if (k < 1) throw ConfigError("source_means: at least one class required");
  if (static_cast<int>(target_means.size()) != k) {
    throw ConfigError(fmt::format("target_means: expected {} classes, got {}", k, target_means.size()));
  }
  const int d = dim();
  if (d < 1) throw ConfigError("class means must have at least one coordinate");
  for (const auto* means : {&source_means, &target_means}) {
    for (const auto& m : *means) {
      if (m.size() != d) throw ConfigError("class means must share one dimension");
      if (!m.allFinite()) throw ConfigError("class means must be finite");
    }
  }
  if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq)) throw ConfigError("sigma_sq must be positive");
  if (!(w_scale >= 0.0) || !std::isfinite(w_scale)) throw ConfigError("w_scale must be non-negative");
  if (n_source <= 0) throw ConfigError("n_source must be positive");
  if (n_target <= 0) throw ConfigError("n_target must be positive");
  if (n_target_test <= 0) throw ConfigError("n_target_test must be positive");
  check_simplex(source_proportions, k, "source_proportions");
  check_simplex(target_proportions, k, "target_proportions");
  check_simplex(test_proportions, k, "test_proportions");
  check_simplex(label_shift_proportions, k, "label_shift_proportions");
  if (scenario == Scenario::label_swap && k < 2) {
    throw ConfigError("label_swap needs at least 2 classes");
  }
}

std::vector<int> allocate_counts(int total, std::span<const double> proportions) {
  const std::size_t k = proportions.size();
  std::vector<int> counts(k, 0);
  std::vector<double> remainders(k, 0.0);
  int assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = proportions[i] * total;
    counts[i] = static_cast<int>(std::floor(exact));
    remainders[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t j = 0; assigned < total; j = (j + 1) % k, ++assigned) counts[order[j]] += 1;
  return counts;
}

Eigen::MatrixXd draw_covariance(int dim, double sigma_sq, double w_scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd w(dim, dim);
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) w(r, c) = w_scale * normal(rng);
  }
  return sigma_sq * Eigen::MatrixXd::Identity(dim, dim) + w * w.transpose();
}

namespace {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd chol;  // lower factor of the covariance
};

std::vector<Gaussian> draw_components(const std::vector<Eigen::VectorXd>& means,
                                      const ScenarioConfig& cfg, Rng& rng) {
  std::vector<Gaussian> out;
  for (const auto& m : means) {
    Eigen::MatrixXd cov = draw_covariance(cfg.dim(), cfg.sigma_sq, cfg.w_scale, rng);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    out.push_back({m, llt.matrixL()});
  }
  return out;
}

DomainDataset sample(const std::vector<Gaussian>& comps, int total, std::span<const double> proportions,
                     Domain domain, std::string name, int num_classes, Rng& rng) {
  const auto counts = allocate_counts(total, proportions);
  const int d = static_cast<int>(comps.front().mean.size());
  DomainDataset ds;
  ds.features.resize(total, d);
  ds.labels.reserve(static_cast<std::size_t>(total));
  ds.domain = domain;
  ds.num_classes = num_classes;
  ds.name = std::move(name);
  std::normal_distribution<double> normal(0.0, 1.0);
  ad::Index row = 0;
  Eigen::VectorXd z(d);
  for (std::size_t k = 0; k < comps.size(); ++k) {
    for (int n = 0; n < counts[k]; ++n, ++row) {
      for (int c = 0; c < d; ++c) z(c) = normal(rng);
      ds.features.row(row) = (comps[k].mean + comps[k].chol * z).transpose();
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

}  // namespace

DomainSplit generate_gaussian_2d(const ScenarioConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto source = draw_components(cfg.source_means, cfg, rng);
  const auto target = draw_components(cfg.target_means, cfg, rng);
  const int k = cfg.num_classes();
  DomainSplit split;
  split.source = sample(source, cfg.n_source, cfg.source_proportions, Domain::source, "source", k, rng);
  split.target_train =
      sample(target, cfg.n_target, cfg.target_proportions, Domain::target, "target_train", k, rng);
  split.target_test =
      sample(target, cfg.n_target_test, cfg.test_proportions, Domain::target, "target_test", k, rng);
  return split;
}

DomainSplit generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  switch (cfg.scenario) {
    case Scenario::base:
      return generate_gaussian_2d(cfg);
    case Scenario::label_shift: {
      ScenarioConfig shifted = cfg;
      shifted.target_proportions = cfg.label_shift_proportions;
      return generate_gaussian_2d(shifted);
    }
    case Scenario::label_swap: {
      DomainSplit split = generate_gaussian_2d(cfg);
      for (auto* ds : {&split.target_train, &split.target_test}) {
        for (int& y : ds->labels) {
          if (y == 0 || y == 1) y = 1 - y;
        }
      }
      return split;
    }
  }
  throw ConfigError("unknown scenario");
}

DomainDataset select_labeled_target(const DomainDataset& target_train, int k_per_class,
                                    std::uint64_t seed) {
  if (k_per_class < 0) throw ConfigError("k_per_class must be non-negative");
  DomainDataset out = target_train;
  std::fill(out.labels.begin(), out.labels.end(), kUnlabeled);
  if (k_per_class == 0) return out;
  Rng rng(seed);
  for (int k = 0; k < target_train.num_classes; ++k) {
    auto members = target_train.indices_of_class(k);
    if (static_cast<int>(members.size()) < k_per_class) {
      throw ShortageError(fmt::format("class {} has {} labeled examples, {} requested", k,
                                      members.size(), k_per_class));
    }
    // Partial Fisher-Yates: the first k entries form a uniform sample.
    for (int i = 0; i < k_per_class; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), members.size() - 1);
      std::swap(members[static_cast<std::size_t>(i)], members[pick(rng)]);
      const auto row = static_cast<std::size_t>(members[static_cast<std::size_t>(i)]);
      out.labels[row] = target_train.labels[row];
    }
  }
  return out;
}

}  // namespace dirl
