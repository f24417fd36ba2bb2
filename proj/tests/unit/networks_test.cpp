#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dirl/error.hpp"
#include "dirl/networks.hpp"
#include "oracles.hpp"

using namespace dirl;

namespace {

NetworkSpec spec2d() { return NetworkSpec{}; }

}  // namespace

TEST(InitBundle, SameSeedSameParameters) {
  const auto a = init_bundle(spec2d(), 1);
  const auto b = init_bundle(spec2d(), 1);
  const auto c = init_bundle(spec2d(), 2);
  EXPECT_TRUE(parameters_equal(a, b));
  EXPECT_FALSE(parameters_equal(a, c));
}

TEST(InitBundle, OneClassDiscriminatorPerClass) {
  EXPECT_EQ(init_bundle(spec2d(), 0).class_disc.size(), 2u);
  auto s = spec2d();
  s.num_classes = 4;
  EXPECT_EQ(init_bundle(s, 0).class_disc.size(), 4u);
}

TEST(InitBundle, LayerWidths) {
  const auto b = init_bundle(spec2d(), 0);
  EXPECT_EQ(b.extractor.widths(), (std::vector<int>{2, 7, 7, 7}));
  EXPECT_EQ(b.classifier.widths(), (std::vector<int>{7, 7, 7, 7, 2}));
  EXPECT_EQ(b.domain_disc.widths(), (std::vector<int>{7, 7, 7, 7, 2}));
  EXPECT_EQ(b.classifier.negative_slope(), 0.0);
  EXPECT_EQ(b.domain_disc.negative_slope(), 0.2);
  EXPECT_EQ(b.class_disc[1].negative_slope(), 0.2);
}

TEST(InitBundle, FanInScaledUniform) {
  const auto b = init_bundle(spec2d(), 3);
  for (const auto& [name, p] : b.named_parameters()) {
    if (name.back() == 'b') {
      EXPECT_TRUE(p->value().isZero()) << name;
    } else {
      EXPECT_LE(p->value().cwiseAbs().maxCoeff(), std::sqrt(6.0 / p->rows())) << name;
    }
  }
}

TEST(InitBundle, InvalidSpec) {
  auto s = spec2d();
  s.num_classes = 1;
  EXPECT_THROW(init_bundle(s, 0), ConfigError);
  s = spec2d();
  s.disc_negative_slope = 1.0;
  EXPECT_THROW(init_bundle(s, 0), ConfigError);
}

TEST(Heads, ShapesAndFiniteness) {
  std::mt19937_64 rng(4);
  const Matrix x = oracle::random_matrix(9, 2, rng, 3.0);
  const auto b = init_bundle(spec2d(), 4);
  const Matrix z = features(b, x);
  EXPECT_EQ(z.rows(), 9);
  EXPECT_EQ(z.cols(), 7);
  for (const Matrix& out : {classify(b, z), discriminate_domain(b, z), discriminate_class(b, 0, z),
                            discriminate_class(b, 1, z)}) {
    EXPECT_EQ(out.rows(), 9);
    EXPECT_EQ(out.cols(), 2);
    EXPECT_TRUE(out.allFinite());
  }
  EXPECT_THROW(discriminate_class(b, 2, z), IndexError);
}

TEST(Heads, TapeAndTapeFreeAgree) {
  std::mt19937_64 rng(6);
  const Matrix x = oracle::random_matrix(5, 2, rng);
  auto b = init_bundle(spec2d(), 6);
  ad::Tape tape;
  auto z = features(b, tape, tape.constant(x), Grad::frozen);
  auto logits = classify(b, tape, z, Grad::frozen);
  EXPECT_EQ(z.value(), features(b, x));
  EXPECT_EQ(logits.value(), classify(b, features(b, x)));
  EXPECT_EQ(discriminate_domain(b, tape, z, Grad::frozen).value(), discriminate_domain(b, z.value()));
}

TEST(Heads, PredictIsArgmaxOfComposition) {
  std::mt19937_64 rng(7);
  const Matrix x = oracle::random_matrix(50, 2, rng, 2.0);
  const auto b = init_bundle(spec2d(), 7);
  const Matrix logits = classify(b, features(b, x));
  const auto pred = predict(b, x);
  const Matrix proba = predict_proba(b, x);
  for (ad::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    EXPECT_EQ(pred[static_cast<std::size_t>(i)], static_cast<int>(arg));
    EXPECT_NEAR(proba.row(i).sum(), 1.0, 1e-12);
  }
  EXPECT_EQ(predict(b, x), pred);
}

TEST(Heads, FrozenModeLeavesGradientsZero) {
  std::mt19937_64 rng(8);
  auto b = init_bundle(spec2d(), 8);
  ad::Tape tape;
  auto z = features(b, tape, tape.constant(oracle::random_matrix(4, 2, rng)), Grad::track);
  tape.backward(ad::sum(discriminate_domain(b, tape, z, Grad::frozen)));
  for (auto* p : b.domain_params()) EXPECT_TRUE(p->grad().isZero());
  bool any = false;
  for (auto* p : b.extractor_params()) any = any || !p->grad().isZero();
  EXPECT_TRUE(any);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto b = init_bundle(spec2d(), 12);
  std::mt19937_64 rng(12);
  for (auto& np : b.named_parameters()) {
    np.param->assign(oracle::random_matrix(np.param->rows(), np.param->cols(), rng));
  }
  const auto path = std::filesystem::temp_directory_path() / "dirl_ckpt_roundtrip.ckpt";
  save_checkpoint(b, path);
  const auto back = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_TRUE(parameters_equal(b, back));
  EXPECT_EQ(back.spec.disc_negative_slope, b.spec.disc_negative_slope);
  EXPECT_EQ(back.spec.extractor_hidden, b.spec.extractor_hidden);
}

TEST(Checkpoint, CorruptFileIsRejected) {
  const auto path = std::filesystem::temp_directory_path() / "dirl_ckpt_corrupt.ckpt";
  {
    std::ofstream out(path);
    out << "not a checkpoint\n";
  }
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), IoError);
}

TEST(NamedParameters, StableNames) {
  auto b = init_bundle(spec2d(), 0);
  const auto named = b.named_parameters();
  EXPECT_EQ(named.front().name, "g.0.w");
  bool has_c1 = false;
  for (const auto& np : named) has_c1 = has_c1 || np.name == "C1.3.b";
  EXPECT_TRUE(has_c1);
}
