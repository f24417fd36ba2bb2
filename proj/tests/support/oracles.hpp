#pragma once

// Straightforward loop implementations used as references in tests. They
// share no code with the library.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double sq_dist(const RowMatrix& x, Eigen::Index i, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double d = x(i, c) - x(j, c);
    s += d * d;
  }
  return s;
}

inline std::vector<double> neighbors(const RowMatrix& x, Eigen::Index a, double sigma_sq) {
  std::vector<double> q(static_cast<std::size_t>(x.rows()));
  double z = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    q[static_cast<std::size_t>(i)] = std::exp(-sq_dist(x, i, a) / sigma_sq);
    z += q[static_cast<std::size_t>(i)];
  }
  for (double& v : q) v /= z;
  return q;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

/// Sum over anchors of the hinged gap between mean positive and mean
/// negative KL divergence of neighbor distributions.
inline double triplet(const RowMatrix& x, const std::vector<int>& y, double margin, double sigma_sq) {
  const Eigen::Index m = x.rows();
  double total = 0.0;
  bool two_classes = false;
  for (Eigen::Index i = 1; i < m; ++i) two_classes = two_classes || y[i] != y[0];
  if (!two_classes) return 0.0;
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto qa = neighbors(x, a, sigma_sq);
    double pos = 0.0, neg = 0.0;
    int np = 0, nn = 0;
    for (Eigen::Index b = 0; b < m; ++b) {
      if (b == a) continue;
      const double d = kl(qa, neighbors(x, b, sigma_sq));
      if (y[b] == y[a]) {
        pos += d;
        ++np;
      } else {
        neg += d;
        ++nn;
      }
    }
    if (np == 0) continue;
    total += std::max(0.0, pos / np - neg / nn + margin);
  }
  return total;
}

/// Mean silhouette with singleton clusters scoring 0.
inline double silhouette(const RowMatrix& x, const std::vector<int>& y) {
  const Eigen::Index n = x.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double own = 0.0;
    int own_n = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && y[j] == y[i]) {
        own += std::sqrt(sq_dist(x, i, j));
        ++own_n;
      }
    }
    if (own_n == 0) continue;
    const double a = own / own_n;
    double b = std::numeric_limits<double>::infinity();
    std::vector<int> seen;
    for (Eigen::Index j = 0; j < n; ++j) {
      const int c = y[j];
      if (c == y[i]) continue;
      bool done = false;
      for (int s : seen) done = done || s == c;
      if (done) continue;
      seen.push_back(c);
      double sum = 0.0;
      int cnt = 0;
      for (Eigen::Index k = 0; k < n; ++k) {
        if (y[k] == c) {
          sum += std::sqrt(sq_dist(x, i, k));
          ++cnt;
        }
      }
      b = std::min(b, sum / cnt);
    }
    const double d = std::max(a, b);
    if (d > 0.0) total += (b - a) / d;
  }
  return total / static_cast<double>(n);
}

inline RowMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double spread = 1.0) {
  std::normal_distribution<double> n(0.0, spread);
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline RowMatrix normalize_rows(RowMatrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm();
  return m;
}

}  // namespace oracle
