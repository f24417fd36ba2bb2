#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "dirl/dataset.hpp"

namespace dirl {

enum class Scenario { base, label_swap, label_shift };

std::string_view to_string(Scenario s);
/// Throws ConfigError for unknown names.
Scenario parse_scenario(std::string_view s);

/// Constants of the two-domain Gaussian mixture benchmark. Counts are totals
/// per dataset, split across classes by the matching proportion vector.
struct ScenarioConfig {
  Scenario scenario = Scenario::base;
  std::vector<Eigen::VectorXd> source_means = {Eigen::Vector2d(-2.5, -1.5),
                                               Eigen::Vector2d(-1.0, -1.0)};
  std::vector<Eigen::VectorXd> target_means = {Eigen::Vector2d(1.0, 1.0),
                                               Eigen::Vector2d(2.5, 1.5)};
  double sigma_sq = 0.1;
  double w_scale = 0.25;
  int n_source = 2000;
  int n_target = 2000;
  int n_target_test = 100;
  std::vector<double> source_proportions = {0.5, 0.5};
  std::vector<double> target_proportions = {0.5, 0.5};
  std::vector<double> test_proportions = {0.5, 0.5};
  /// Target-train proportions used by the label_shift scenario.
  std::vector<double> label_shift_proportions = {0.8, 0.2};
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(source_means.size()); }
  int dim() const;
  /// Throws ConfigError on inconsistent sizes, non-simplex proportions, or
  /// non-positive counts.
  void validate() const;
};

struct DomainSplit {
  DomainDataset source;
  DomainDataset target_train;
  DomainDataset target_test;
};

/// Splits `total` across `proportions` with largest-remainder rounding; ties
/// in the remainder go to the lower class index.
std::vector<int> allocate_counts(int total, std::span<const double> proportions);

/// sigma_sq * I + W W^T with W = w_scale * standard normal (d x d).
Eigen::MatrixXd draw_covariance(int dim, double sigma_sq, double w_scale, Rng& rng);

/// Draws every class of both domains from its own Gaussian. One covariance
/// is drawn per class per domain and shared by target train and test. The
/// scenario field is ignored.
DomainSplit generate_gaussian_2d(const ScenarioConfig& cfg);

/// base: generate_gaussian_2d. label_swap: same samples with target labels
/// 0 and 1 exchanged. label_shift: target-train proportions replaced by
/// `label_shift_proportions`; source and test proportions unchanged.
DomainSplit generate_scenario(const ScenarioConfig& cfg);

/// Keeps the labels of exactly `k_per_class` examples per class, chosen
/// uniformly without replacement, and marks every other example unlabeled.
/// Throws ShortageError naming the class when one has fewer than k examples.
DomainDataset select_labeled_target(const DomainDataset& target_train, int k_per_class,
                                    std::uint64_t seed);

}  // namespace dirl
