#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dirl/autodiff.hpp"

namespace dirl {

using Matrix = ad::Matrix;
using Rng = std::mt19937_64;

enum class Domain { source, target };

std::string_view to_string(Domain d);
Domain parse_domain(std::string_view s);

/// Label value that marks an example whose class is hidden from training.
inline constexpr int kUnlabeled = -1;

struct LabeledExample {
  Eigen::VectorXd features;
  std::optional<int> class_label;
  Domain domain = Domain::source;
};

/// Feature matrix with one row per example, plus observed labels.
/// `labels[i] == kUnlabeled` marks an unlabeled example.
struct DomainDataset {
  Matrix features;
  std::vector<int> labels;
  Domain domain = Domain::source;
  int num_classes = 0;
  std::string name;

  ad::Index size() const { return features.rows(); }
  ad::Index dim() const { return features.cols(); }
  bool is_labeled(ad::Index i) const { return labels[static_cast<std::size_t>(i)] != kUnlabeled; }
  bool fully_labeled() const;
  LabeledExample example(ad::Index i) const;

  /// Row indices whose label equals `k`.
  std::vector<ad::Index> indices_of_class(int k) const;
  std::vector<ad::Index> labeled_indices() const;
  std::vector<ad::Index> unlabeled_indices() const;
  /// Number of labeled examples per class.
  std::vector<ad::Index> class_counts() const;

  /// Throws ContractError when the shape, label range, or emptiness
  /// invariants do not hold.
  void validate() const;
};

/// Rows of `features` selected by `rows`, in order.
Matrix gather_rows(const Matrix& features, std::span<const ad::Index> rows);

/// Writes `x0,...,x{d-1},label,domain,is_labeled` rows; labels print -1 when
/// unlabeled. Doubles use 17 significant digits so reading back is exact.
void write_dataset_csv(const DomainDataset& ds, const std::filesystem::path& path);
DomainDataset read_dataset_csv(const std::filesystem::path& path, int num_classes,
                               std::string name = {});

/// FNV-1a over feature bits, labels, and domain tags.
std::uint64_t dataset_checksum(const DomainDataset& ds);

}  // namespace dirl
