#pragma once

#include <vector>

#include "dirl/dataset.hpp"

namespace dirl {

/// One optimization step's worth of examples. Source and target halves have
/// equal size; pseudo-labeled rows are extra and only feed the conditional
/// and triplet terms.
struct MiniBatch {
  Matrix source_x;
  std::vector<int> source_y;
  Matrix labeled_target_x;
  std::vector<int> labeled_target_y;
  Matrix unlabeled_target_x;
  Matrix pseudo_target_x;
  std::vector<int> pseudo_target_y;

  ad::Index source_count() const { return source_x.rows(); }
  ad::Index target_count() const { return labeled_target_x.rows() + unlabeled_target_x.rows(); }
  /// Labeled target rows followed by unlabeled target rows.
  Matrix target_x() const;
};

struct ClassGroup {
  int label = 0;
  Matrix source_x;
  Matrix target_x;
};

/// Per-class source/target groups for the class-conditional discriminators.
struct ClassBatch {
  std::vector<ClassGroup> groups;
  /// Classes without any target representative this step.
  std::vector<int> skipped_classes;
};

/// Draws batch_size/2 source rows, class-balanced, with replacement, and a
/// target half of floor(fraction * batch_size/2) labeled rows plus unlabeled
/// rows, also with replacement.
///
/// Throws ConfigError for an odd batch size, a fraction outside [0, 1], or a
/// positive fraction with no labeled target rows; ContractError when a
/// required pool is empty.
MiniBatch sample_mixed_batch(const DomainDataset& source, const DomainDataset& target, int batch_size,
                             double labeled_target_fraction, Rng& rng);

/// Appends `count` rows drawn with replacement from the labeled rows of
/// `pseudo_pool` to the pseudo fields of `batch`. No-op for an empty pool.
void add_pseudo_rows(MiniBatch& batch, const DomainDataset& pseudo_pool, int count, Rng& rng);

/// For every class k draws `per_class_count` source rows of class k and the
/// same number of labeled rows of class k from `target_pool`, with
/// replacement. Classes with no target row are skipped and reported.
ClassBatch sample_classwise_batch(const DomainDataset& source, const DomainDataset& target_pool,
                                  int per_class_count, Rng& rng);

}  // namespace dirl
