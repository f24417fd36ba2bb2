#include "dirl/batching.hpp"

#include <fmt/format.h>

#include <cmath>

#include "dirl/error.hpp"

namespace dirl {

Matrix MiniBatch::target_x() const {
  Matrix out(target_count(), std::max(labeled_target_x.cols(), unlabeled_target_x.cols()));
  out.topRows(labeled_target_x.rows()) = labeled_target_x;
  out.bottomRows(unlabeled_target_x.rows()) = unlabeled_target_x;
  return out;
}

namespace {

std::vector<ad::Index> draw_with_replacement(std::span<const ad::Index> pool, int count, Rng& rng) {
  std::vector<ad::Index> out;
  out.reserve(static_cast<std::size_t>(count));
  if (count == 0) return out;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int i = 0; i < count; ++i) out.push_back(pool[pick(rng)]);
  return out;
}

std::vector<int> labels_of(const DomainDataset& ds, std::span<const ad::Index> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (ad::Index r : rows) out.push_back(ds.labels[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace

MiniBatch sample_mixed_batch(const DomainDataset& source, const DomainDataset& target, int batch_size,
                             double labeled_target_fraction, Rng& rng) {
  if (batch_size <= 0 || batch_size % 2 != 0) {
    throw ConfigError(fmt::format("batch_size must be positive and even, got {}", batch_size));
  }
  if (!(labeled_target_fraction >= 0.0 && labeled_target_fraction <= 1.0)) {
    throw ConfigError(fmt::format("labeled_target_fraction must lie in [0, 1], got {}",
                                  labeled_target_fraction));
  }
  const int half = batch_size / 2;
  const int k = source.num_classes;
  const int n_labeled = static_cast<int>(std::floor(labeled_target_fraction * half));
  const int n_unlabeled = half - n_labeled;

  const auto labeled_pool = target.labeled_indices();
  const auto unlabeled_pool = target.unlabeled_indices();
  if (n_labeled > 0 && labeled_pool.empty()) {
    throw ConfigError("labeled_target_fraction > 0 but the target pool has no labeled examples");
  }
  if (n_unlabeled > 0 && unlabeled_pool.empty()) {
    throw ContractError("target pool has no unlabeled examples");
  }

  MiniBatch batch;
  std::vector<ad::Index> source_rows;
  for (int c = 0; c < k; ++c) {
    const int quota = half / k + (c < half % k ? 1 : 0);
    const auto members = source.indices_of_class(c);
    if (members.empty() && quota > 0) {
      throw ContractError(fmt::format("source pool has no examples of class {}", c));
    }
    const auto drawn = draw_with_replacement(members, quota, rng);
    source_rows.insert(source_rows.end(), drawn.begin(), drawn.end());
  }
  batch.source_x = gather_rows(source.features, source_rows);
  batch.source_y = labels_of(source, source_rows);

  const auto lab_rows = draw_with_replacement(labeled_pool, n_labeled, rng);
  batch.labeled_target_x = gather_rows(target.features, lab_rows);
  batch.labeled_target_y = labels_of(target, lab_rows);
  const auto unl_rows = draw_with_replacement(unlabeled_pool, n_unlabeled, rng);
  batch.unlabeled_target_x = gather_rows(target.features, unl_rows);
  batch.pseudo_target_x.resize(0, target.dim());
  return batch;
}

void add_pseudo_rows(MiniBatch& batch, const DomainDataset& pseudo_pool, int count, Rng& rng) {
  const auto pool = pseudo_pool.labeled_indices();
  if (pool.empty() || count <= 0) return;
  const auto rows = draw_with_replacement(pool, count, rng);
  Matrix extra = gather_rows(pseudo_pool.features, rows);
  const ad::Index before = batch.pseudo_target_x.rows();
  batch.pseudo_target_x.conservativeResize(before + extra.rows(), extra.cols());
  batch.pseudo_target_x.bottomRows(extra.rows()) = extra;
  const auto labels = labels_of(pseudo_pool, rows);
  batch.pseudo_target_y.insert(batch.pseudo_target_y.end(), labels.begin(), labels.end());
}

ClassBatch sample_classwise_batch(const DomainDataset& source, const DomainDataset& target_pool,
                                  int per_class_count, Rng& rng) {
  if (per_class_count <= 0) {
    throw ConfigError(fmt::format("per_class_count must be positive, got {}", per_class_count));
  }
  ClassBatch out;
  for (int c = 0; c < source.num_classes; ++c) {
    const auto src = source.indices_of_class(c);
    if (src.empty()) throw ContractError(fmt::format("source pool has no examples of class {}", c));
    const auto tgt = target_pool.indices_of_class(c);
    if (tgt.empty()) {
      out.skipped_classes.push_back(c);
      continue;
    }
    ClassGroup group;
    group.label = c;
    group.source_x = gather_rows(source.features, draw_with_replacement(src, per_class_count, rng));
    group.target_x = gather_rows(target_pool.features, draw_with_replacement(tgt, per_class_count, rng));
    out.groups.push_back(std::move(group));
  }
  return out;
}

}  // namespace dirl
