#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dirl/dataset.hpp"
#include "dirl/networks.hpp"

namespace dirl {

/// Fraction of rows whose argmax prediction equals the label. The dataset
/// must be non-empty and fully labeled.
double accuracy(const ModelBundle& bundle, const DomainDataset& dataset);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

/// Per-class recall; nullopt for classes absent from the dataset.
std::vector<std::optional<double>> class_recall(const ModelBundle& bundle, const DomainDataset& dataset);

/// Mean over rows of (b - a) / max(a, b) with Euclidean distances, where a is
/// the mean distance to the rest of the row's class and b the smallest mean
/// distance to another class. Rows in singleton classes score 0. Requires at
/// least two distinct labels.
double silhouette_score(const Matrix& embeddings, std::span<const int> labels);

/// Domain classifier used to estimate how separable two feature sets are.
struct ProbeConfig {
  int steps = 2000;
  double lr = 1e-3;
  int batch_size = 128;
  double train_fraction = 0.8;
  /// Each side is subsampled to min(|source|, |target|, max_per_domain) rows
  /// so that 0.5 is chance level.
  int max_per_domain = 1000;
  std::vector<int> hidden = {7, 7, 7};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Trains a fresh MLP to tell source rows from target rows (inputs
/// standardized on the training split) and returns held-out accuracy.
double marginal_probe(const Matrix& source_features, const Matrix& target_features, const ProbeConfig& cfg);
/// Same, on g-features of the two datasets. The bundle is only read.
double marginal_probe(const ModelBundle& bundle, const DomainDataset& source, const DomainDataset& target,
                      const ProbeConfig& cfg);

struct ConditionalProbeResult {
  /// nullopt when the class is missing from either domain.
  std::vector<std::optional<double>> per_class;
  /// Mean over available classes; nullopt if none is available.
  std::optional<double> mean;
};

/// marginal_probe restricted to each class's rows in both domains.
ConditionalProbeResult conditional_probe(const Matrix& source_features, std::span<const int> source_labels,
                                         const Matrix& target_features, std::span<const int> target_labels,
                                         int num_classes, const ProbeConfig& cfg);
ConditionalProbeResult conditional_probe(const ModelBundle& bundle, const DomainDataset& source,
                                         const DomainDataset& target_labeled, const ProbeConfig& cfg);

struct EmbeddingRow {
  Eigen::VectorXd input;
  Eigen::VectorXd features;
  int predicted = 0;
  int label = kUnlabeled;
  Domain domain = Domain::source;
};

/// CSV with columns x0.., z0.., predicted, label, domain.
void export_embeddings(const ModelBundle& bundle, std::span<const DomainDataset* const> datasets,
                       const std::filesystem::path& path);
std::vector<EmbeddingRow> read_embeddings(const std::filesystem::path& path);

struct GridBounds {
  double x0_min = -4.0;
  double x0_max = 4.0;
  double x1_min = -3.0;
  double x1_max = 3.0;
};

struct GridPoint {
  double x0 = 0.0;
  double x1 = 0.0;
  int predicted = 0;
  double max_prob = 0.0;
};

/// Predictions on a resolution x resolution lattice spanning `bounds`
/// (2D inputs only). Throws ConfigError for resolution < 2 or bad bounds.
std::vector<GridPoint> decision_grid(const ModelBundle& bundle, const GridBounds& bounds, int resolution);
void write_grid_csv(std::span<const GridPoint> grid, const std::filesystem::path& path);

}  // namespace dirl
