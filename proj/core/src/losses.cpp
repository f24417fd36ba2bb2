#include "dirl/losses.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>

#include "dirl/error.hpp"
#include "dirl/networks.hpp"

namespace dirl {

void LossWeights::validate() const {
  for (double w : {ce, marginal, conditional, triplet}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ConfigError(fmt::format("loss weights must be finite and non-negative, got {}", w));
    }
  }
}

void TripletConfig::validate() const {
  if (!std::isfinite(margin) || margin < 0.0) {
    throw ConfigError(fmt::format("triplet margin must be finite and non-negative, got {}", margin));
  }
  if (!std::isfinite(sigma_sq) || !(sigma_sq > 0.0)) {
    throw ConfigError(fmt::format("triplet sigma_sq must be finite and positive, got {}", sigma_sq));
  }
}

namespace {

ad::Tensor nll_of_label(const ad::Tensor& logits, int label, const char* what) {
  if (!logits.valid() || logits.rows() == 0) throw ContractError(fmt::format("{}: empty batch", what));
  const std::vector<int> labels(static_cast<std::size_t>(logits.rows()), label);
  return ad::scale(ad::pick_mean(ad::log_softmax(logits), labels), -1.0);
}

}  // namespace

ad::Tensor marginal_disc_loss(const ad::Tensor& d_src_logits, const ad::Tensor& d_tgt_logits) {
  return ad::add(nll_of_label(d_src_logits, kSourceLogit, "marginal_disc_loss"),
                 nll_of_label(d_tgt_logits, kTargetLogit, "marginal_disc_loss"));
}

ad::Tensor marginal_gen_loss(const ad::Tensor& d_tgt_logits) {
  return nll_of_label(d_tgt_logits, kSourceLogit, "marginal_gen_loss");
}

ad::Tensor conditional_disc_loss(const ad::Tensor& c_src_logits, const ad::Tensor& c_tgt_logits) {
  return marginal_disc_loss(c_src_logits, c_tgt_logits);
}

ad::Tensor conditional_gen_loss(const ad::Tensor& c_tgt_logits) { return marginal_gen_loss(c_tgt_logits); }

ad::Tensor supervised_ce_loss(const ad::Tensor& f_src_logits, std::span<const int> y_src,
                              const ad::Tensor& f_tgt_logits, std::span<const int> y_tgt) {
  if (!f_src_logits.valid() || f_src_logits.rows() == 0) {
    throw ContractError("supervised_ce_loss: empty source batch");
  }
  ad::Tensor loss = ad::scale(ad::pick_mean(ad::log_softmax(f_src_logits), y_src), -1.0);
  if (f_tgt_logits.valid() && f_tgt_logits.rows() > 0) {
    loss = ad::sub(loss, ad::pick_mean(ad::log_softmax(f_tgt_logits), y_tgt));
  }
  return loss;
}

Eigen::VectorXd neighbor_distribution(const ad::Matrix& features_norm, ad::Index anchor, double sigma_sq) {
  const ad::Index m = features_norm.rows();
  if (m < 2) throw ContractError(fmt::format("neighbor_distribution: needs at least 2 rows, got {}", m));
  if (anchor < 0 || anchor >= m) {
    throw IndexError(fmt::format("neighbor_distribution: anchor {} outside [0, {})", anchor, m));
  }
  if (!(sigma_sq > 0.0)) throw ConfigError("neighbor_distribution: sigma_sq must be positive");
  Eigen::VectorXd logits(m);
  for (ad::Index i = 0; i < m; ++i) {
    logits(i) = -(features_norm.row(i) - features_norm.row(anchor)).squaredNorm() / sigma_sq;
  }
  const double top = logits.maxCoeff();
  Eigen::VectorXd q = (logits.array() - top).exp();
  return q / q.sum();
}

double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) {
    throw DimensionError(fmt::format("kl_categorical: sizes {} and {} differ", p.size(), q.size()));
  }
  if (std::abs(p.sum() - 1.0) > 1e-6 || std::abs(q.sum() - 1.0) > 1e-6) {
    throw ContractError(fmt::format("kl_categorical: inputs sum to {} and {}, expected 1", p.sum(), q.sum()));
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) < 0.0 || q(i) < 0.0) throw ContractError("kl_categorical: negative probability");
    if (p(i) == 0.0) continue;
    if (q(i) == 0.0) throw ContractError("kl_categorical: q has zero mass where p is positive");
    kl += p(i) * std::log(p(i) / q(i));
  }
  return kl;
}

ad::Tensor triplet_distribution_loss(const ad::Tensor& features_norm, std::span<const int> labels,
                                     const TripletConfig& cfg, TripletStats* stats) {
  cfg.validate();
  if (!features_norm.valid()) throw ContractError("triplet_distribution_loss: invalid features");
  ad::Tape& tape = *features_norm.tape();
  const ad::Index m = features_norm.rows();
  if (static_cast<ad::Index>(labels.size()) != m) {
    throw DimensionError(fmt::format("triplet_distribution_loss: {} labels for {} rows", labels.size(), m));
  }

  std::map<int, int> class_sizes;
  for (int y : labels) class_sizes[y] += 1;
  TripletStats local;
  TripletStats& st = stats ? *stats : local;
  st = {};
  if (class_sizes.size() < 2) {
    st.single_class = true;
    return tape.constant(ad::Matrix::Zero(1, 1));
  }

  // Row a of `weights` averages KL over positives (+) and negatives (-).
  ad::Matrix weights = ad::Matrix::Zero(m, m);
  ad::Matrix anchor_mask = ad::Matrix::Zero(m, 1);
  for (ad::Index a = 0; a < m; ++a) {
    const int ya = labels[static_cast<std::size_t>(a)];
    const int positives = class_sizes[ya];
    if (positives < 2) {
      st.anchors_skipped += 1;
      continue;
    }
    const int negatives = static_cast<int>(m) - positives;
    for (ad::Index b = 0; b < m; ++b) {
      if (b == a) continue;
      weights(a, b) = labels[static_cast<std::size_t>(b)] == ya ? 1.0 / (positives - 1) : -1.0 / negatives;
    }
    anchor_mask(a, 0) = 1.0;
    st.anchors_used += 1;
  }

  const ad::Tensor& f = features_norm;
  // Squared distances ||f_a||^2 + ||f_b||^2 - 2 <f_a, f_b>.
  const ad::Tensor sq_norms = ad::row_sum(ad::mul(f, f));
  const ad::Tensor gram = ad::matmul(f, ad::transpose(f));
  const ad::Tensor dist = ad::add_col_vector(
      ad::add_row_vector(ad::scale(gram, -2.0), ad::transpose(sq_norms)), sq_norms);
  const ad::Tensor log_q = ad::log_softmax(ad::scale(dist, -1.0 / cfg.sigma_sq));
  const ad::Tensor q = ad::exp(log_q);
  // KL(q_a || q_b) = sum_i q_a(i) log q_a(i) - sum_i q_a(i) log q_b(i).
  const ad::Tensor neg_entropy = ad::row_sum(ad::mul(q, log_q));
  const ad::Tensor cross = ad::matmul(q, ad::transpose(log_q));
  const ad::Tensor kl = ad::add_col_vector(ad::scale(cross, -1.0), neg_entropy);

  const ad::Tensor per_anchor =
      ad::add_scalar(ad::row_sum(ad::mul(kl, tape.constant(std::move(weights)))), cfg.margin);
  return ad::sum(ad::mul(ad::relu(per_anchor), tape.constant(std::move(anchor_mask))));
}

ad::Tensor total_dirl_loss(ad::Tape& tape, const GeneratorTerms& terms, const LossWeights& weights) {
  weights.validate();
  ad::Tensor total;
  auto accumulate = [&total](const ad::Tensor& term, double w) {
    if (!term.valid() || w == 0.0) return;
    const ad::Tensor weighted = ad::scale(term, w);
    total = total.valid() ? ad::add(total, weighted) : weighted;
  };
  accumulate(terms.ce, weights.ce);
  accumulate(terms.marginal_gen, weights.marginal);
  if (!terms.conditional_gen.empty() && weights.conditional != 0.0) {
    ad::Tensor cond = terms.conditional_gen.front();
    for (std::size_t k = 1; k < terms.conditional_gen.size(); ++k) cond = ad::add(cond, terms.conditional_gen[k]);
    accumulate(cond, weights.conditional);
  }
  accumulate(terms.triplet, weights.triplet);
  return total.valid() ? total : tape.constant(ad::Matrix::Zero(1, 1));
}

}  // namespace dirl
