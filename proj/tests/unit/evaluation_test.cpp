#include <gtest/gtest.h>

#include <array>
#include <filesystem>

#include "dirl/error.hpp"
#include "dirl/evaluation.hpp"
#include "dirl/synthetic_data.hpp"
#include "oracles.hpp"

using namespace dirl;

namespace {

ProbeConfig fast_probe(std::uint64_t seed = 0) {
  ProbeConfig p;
  p.steps = 400;
  p.lr = 1e-2;
  p.seed = seed;
  return p;
}

Matrix blob(int n, double cx, double cy, double spread, std::mt19937_64& rng) {
  Matrix m = oracle::random_matrix(n, 2, rng, spread);
  m.col(0).array() += cx;
  m.col(1).array() += cy;
  return m;
}

std::vector<int> repeat(int label, int n) { return std::vector<int>(static_cast<std::size_t>(n), label); }

}  // namespace

TEST(Accuracy, Counting) {
  const std::vector<int> labels = {0, 1, 1, 0};
  EXPECT_EQ(accuracy(std::vector<int>{0, 1, 1, 0}, labels), 1.0);
  EXPECT_EQ(accuracy(std::vector<int>{0, 1, 1, 1}, labels), 0.75);
  EXPECT_THROW(accuracy(std::vector<int>{0, 1}, labels), DimensionError);
}

TEST(Accuracy, FlippedLabelsComplement) {
  ScenarioConfig sc;
  sc.n_target_test = 200;
  auto ds = generate_gaussian_2d(sc).target_test;
  const auto b = init_bundle(NetworkSpec{}, 3);
  const double a = accuracy(b, ds);
  for (auto& y : ds.labels) y = 1 - y;
  EXPECT_NEAR(accuracy(b, ds), 1.0 - a, 1e-15);
}

TEST(Accuracy, RejectsUnlabeledRows) {
  auto ds = generate_gaussian_2d(ScenarioConfig{}).target_test;
  ds.labels[0] = kUnlabeled;
  EXPECT_THROW(accuracy(init_bundle(NetworkSpec{}, 0), ds), ContractError);
}

TEST(ClassRecall, MissingClassIsEmpty) {
  auto ds = generate_gaussian_2d(ScenarioConfig{}).target_test;
  for (auto& y : ds.labels) y = 0;
  const auto r = class_recall(init_bundle(NetworkSpec{}, 0), ds);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_TRUE(r[0].has_value());
  EXPECT_FALSE(r[1].has_value());
}

TEST(Silhouette, SeparatedCoincidentClusters) {
  Matrix x(4, 2);
  x << 0, 0, 0, 0, 10, 10, 10, 10;
  EXPECT_DOUBLE_EQ(silhouette_score(x, std::vector<int>{0, 0, 1, 1}), 1.0);
}

TEST(Silhouette, MixedLabelsOnDuplicatedCluster) {
  Matrix x(6, 2);
  x << 0, 0, 0.1, 0, 0, 0.1, 0, 0, 0.1, 0, 0, 0.1;
  const std::vector<int> y = {0, 1, 0, 1, 0, 1};
  const double s = silhouette_score(x, y);
  EXPECT_LE(s, 0.0);
  EXPECT_NEAR(s, oracle::silhouette(x, y), 1e-12);
}

TEST(Silhouette, KnownValue) {
  // Reference value from scikit-learn's silhouette_score on the same points.
  Matrix x(8, 2);
  x << 0, 0, 1, 0, 0, 1, 5, 5, 6, 5, 5, 7, 2, 2, 2.5, 2;
  EXPECT_NEAR(silhouette_score(x, std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2}), 0.6510921505040363, 1e-12);
}

TEST(Silhouette, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> size(3, 200), classes(2, 5), dim(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    const int k = std::min(classes(rng), n);
    const Matrix x = oracle::random_matrix(n, dim(rng), rng);
    std::vector<int> y(static_cast<std::size_t>(n));
    std::uniform_int_distribution<int> lab(0, k - 1);
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i < 2 ? i : lab(rng);
    EXPECT_NEAR(silhouette_score(x, y), oracle::silhouette(x, y), 1e-9) << "trial " << trial;
  }
}

TEST(Silhouette, Contracts) {
  EXPECT_THROW(silhouette_score(Matrix::Zero(3, 2), std::vector<int>{1, 1, 1}), ContractError);
  EXPECT_THROW(silhouette_score(Matrix::Zero(3, 2), std::vector<int>{0, 1}), DimensionError);
}

TEST(MarginalProbe, IdenticalDomainsAtChance) {
  std::mt19937_64 rng(11);
  const Matrix x = blob(1000, 0, 0, 1.0, rng);
  EXPECT_NEAR(marginal_probe(x, x, fast_probe()), 0.5, 0.05);
}

TEST(MarginalProbe, SeparatedDomainsNearOne) {
  std::mt19937_64 rng(12);
  const Matrix s = blob(500, -3, 0, 0.5, rng);
  const Matrix t = blob(500, 3, 0, 0.5, rng);
  EXPECT_GE(marginal_probe(s, t, fast_probe()), 0.98);
}

TEST(MarginalProbe, SeededAndPure) {
  std::mt19937_64 rng(13);
  const Matrix s = blob(300, -0.5, 0, 1.0, rng);
  const Matrix t = blob(300, 0.5, 0, 1.0, rng);
  EXPECT_EQ(marginal_probe(s, t, fast_probe(4)), marginal_probe(s, t, fast_probe(4)));
}

TEST(MarginalProbe, BundleParametersUnchanged) {
  const auto split = generate_gaussian_2d(ScenarioConfig{});
  const auto bundle = init_bundle(NetworkSpec{}, 5);
  const auto copy = bundle;
  marginal_probe(bundle, split.source, split.target_train, fast_probe());
  conditional_probe(bundle, split.source, split.target_train, fast_probe());
  EXPECT_TRUE(parameters_equal(bundle, copy));
}

TEST(ConditionalProbe, CrossLabelMatchGeometry) {
  // Source class 0 sits where target class 1 sits and vice versa, so the
  // marginals coincide while each class pair is far apart.
  std::mt19937_64 rng(14);
  const Matrix s = [&] {
    Matrix m(1000, 2);
    m.topRows(500) = blob(500, -3, 0, 0.5, rng);
    m.bottomRows(500) = blob(500, 3, 0, 0.5, rng);
    return m;
  }();
  const Matrix t = [&] {
    Matrix m(1000, 2);
    m.topRows(500) = blob(500, 3, 0, 0.5, rng);
    m.bottomRows(500) = blob(500, -3, 0, 0.5, rng);
    return m;
  }();
  std::vector<int> y = repeat(0, 500);
  const auto ones = repeat(1, 500);
  y.insert(y.end(), ones.begin(), ones.end());
  EXPECT_NEAR(marginal_probe(s, t, fast_probe()), 0.5, 0.06);
  const auto cond = conditional_probe(s, y, t, y, 2, fast_probe());
  ASSERT_TRUE(cond.mean.has_value());
  EXPECT_GE(*cond.per_class[0], 0.98);
  EXPECT_GE(*cond.per_class[1], 0.98);
}

TEST(ConditionalProbe, AlignedClassesAtChance) {
  std::mt19937_64 rng(15);
  Matrix s(1000, 2), t(1000, 2);
  s.topRows(500) = blob(500, -3, 0, 0.5, rng);
  s.bottomRows(500) = blob(500, 3, 0, 0.5, rng);
  t.topRows(500) = blob(500, -3, 0, 0.5, rng);
  t.bottomRows(500) = blob(500, 3, 0, 0.5, rng);
  std::vector<int> y = repeat(0, 500);
  const auto ones = repeat(1, 500);
  y.insert(y.end(), ones.begin(), ones.end());
  const auto cond = conditional_probe(s, y, t, y, 2, fast_probe());
  EXPECT_NEAR(*cond.per_class[0], 0.5, 0.1);
  EXPECT_NEAR(*cond.per_class[1], 0.5, 0.1);
}

TEST(ConditionalProbe, SingleClassReducesToMarginal) {
  std::mt19937_64 rng(16);
  const Matrix s = blob(300, 0, 0, 1.0, rng);
  const Matrix t = blob(200, 1, 0, 1.0, rng);
  const auto cond = conditional_probe(s, repeat(0, 300), t, repeat(0, 200), 1, fast_probe(2));
  EXPECT_EQ(*cond.per_class[0], marginal_probe(s, t, fast_probe(2)));
  EXPECT_EQ(*cond.mean, *cond.per_class[0]);
}

TEST(ConditionalProbe, MissingClassIsEmpty) {
  std::mt19937_64 rng(17);
  const Matrix s = blob(100, 0, 0, 1.0, rng);
  const Matrix t = blob(100, 0, 0, 1.0, rng);
  const auto cond = conditional_probe(s, repeat(0, 100), t, repeat(0, 100), 2, fast_probe());
  EXPECT_TRUE(cond.per_class[0].has_value());
  EXPECT_FALSE(cond.per_class[1].has_value());
}

TEST(Grid, CountAndConsistency) {
  const auto bundle = init_bundle(NetworkSpec{}, 7);
  const auto grid = decision_grid(bundle, {}, 13);
  ASSERT_EQ(grid.size(), 169u);
  Matrix x(static_cast<ad::Index>(grid.size()), 2);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    x(static_cast<ad::Index>(i), 0) = grid[i].x0;
    x(static_cast<ad::Index>(i), 1) = grid[i].x1;
  }
  const auto pred = predict(bundle, x);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(grid[i].predicted, pred[i]);
  EXPECT_EQ(grid.front().x0, -4.0);
  EXPECT_EQ(grid.back().x1, 3.0);
  EXPECT_THROW(decision_grid(bundle, {}, 1), ConfigError);
  EXPECT_THROW(decision_grid(bundle, {1, 0, 0, 1}, 5), ConfigError);
}

TEST(Embeddings, RoundTrip) {
  const auto split = generate_gaussian_2d(ScenarioConfig{});
  const auto bundle = init_bundle(NetworkSpec{}, 8);
  const auto path = std::filesystem::temp_directory_path() / "dirl_embeddings.csv";
  const std::array<const DomainDataset*, 2> sets = {&split.source, &split.target_test};
  export_embeddings(bundle, sets, path);
  const auto rows = read_embeddings(path);
  std::filesystem::remove(path);
  ASSERT_EQ(rows.size(), 2100u);
  const Matrix z = features(bundle, split.target_test.features);
  const auto pred = predict(bundle, split.target_test.features);
  for (ad::Index i = 0; i < split.target_test.size(); ++i) {
    const auto& r = rows[static_cast<std::size_t>(2000 + i)];
    EXPECT_EQ(r.domain, Domain::target);
    EXPECT_EQ(r.label, split.target_test.labels[static_cast<std::size_t>(i)]);
    EXPECT_EQ(r.predicted, pred[static_cast<std::size_t>(i)]);
    for (ad::Index c = 0; c < z.cols(); ++c) {
      EXPECT_NEAR(r.features(c), z(i, c), 1e-12 * std::max(1.0, std::abs(z(i, c))));
    }
    EXPECT_EQ(r.input(0), split.target_test.features(i, 0));
  }
}
