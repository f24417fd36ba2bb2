#pragma once

#include <span>
#include <vector>

#include "dirl/autodiff.hpp"

namespace dirl {

/// Weights of the generator-side objective: supervised cross-entropy,
/// marginal confusion, summed class-conditional confusion, triplet term.
struct LossWeights {
  double ce = 1.0;
  double marginal = 1.0;
  double conditional = 1.0;
  double triplet = 1.0;

  /// Throws ConfigError for negative or non-finite weights.
  void validate() const;
};

struct TripletConfig {
  double margin = 1.0;
  double sigma_sq = 0.5;

  void validate() const;
};

struct TripletStats {
  int anchors_used = 0;
  /// Anchors whose class has a single member in the batch.
  int anchors_skipped = 0;
  /// Only one class present, so no negatives exist and the loss is 0.
  bool single_class = false;
};

/// Discriminator objective: mean -log p(source | z_s) + mean -log p(target | z_t)
/// over two-logit outputs (index 0 = source). Empty batches raise ContractError.
ad::Tensor marginal_disc_loss(const ad::Tensor& d_src_logits, const ad::Tensor& d_tgt_logits);

/// Inverted-label generator objective: mean -log p(source | z_t).
ad::Tensor marginal_gen_loss(const ad::Tensor& d_tgt_logits);

/// Batch-mean cross-entropy on source plus batch-mean cross-entropy on the
/// labeled target rows. An invalid or empty `f_tgt_logits` contributes nothing.
ad::Tensor supervised_ce_loss(const ad::Tensor& f_src_logits, std::span<const int> y_src,
                              const ad::Tensor& f_tgt_logits, std::span<const int> y_tgt);

/// Class-k discriminator objective; same kernel as marginal_disc_loss.
ad::Tensor conditional_disc_loss(const ad::Tensor& c_src_logits, const ad::Tensor& c_tgt_logits);
/// Class-k generator objective; same kernel as marginal_gen_loss.
ad::Tensor conditional_gen_loss(const ad::Tensor& c_tgt_logits);

/// Softmax over batch members i of -||x_i - x_a||^2 / sigma_sq, the anchor
/// included. Requires at least two rows.
Eigen::VectorXd neighbor_distribution(const ad::Matrix& features_norm, ad::Index anchor,
                                      double sigma_sq);

/// sum_i p_i ln(p_i / q_i) with 0 ln 0 = 0. Inputs must each sum to 1 within 1e-6.
double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

/// Hinged triplet loss over neighbor distributions:
///
///   sum_a [ mean_{p != a, y_p = y_a} KL(q_a || q_p)
///           - mean_{n : y_n != y_a} KL(q_a || q_n) + margin ]_+
///
/// `features_norm` should already be row-normalized. Anchors that are the
/// only member of their class are skipped. A single-class batch yields 0.
ad::Tensor triplet_distribution_loss(const ad::Tensor& features_norm, std::span<const int> labels,
                                     const TripletConfig& cfg, TripletStats* stats = nullptr);

/// Generator-side terms of one step. Invalid tensors mark inactive terms.
struct GeneratorTerms {
  ad::Tensor ce;
  ad::Tensor marginal_gen;
  std::vector<ad::Tensor> conditional_gen;
  ad::Tensor triplet;
};

/// ce*w.ce + marginal*w.marginal + (sum_k conditional_k)*w.conditional +
/// triplet*w.triplet. Terms with zero weight are left out entirely.
ad::Tensor total_dirl_loss(ad::Tape& tape, const GeneratorTerms& terms, const LossWeights& weights);

}  // namespace dirl
