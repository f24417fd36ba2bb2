#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "dirl/error.hpp"
#include "dirl/trainer.hpp"

using namespace dirl;

namespace {

TrainingData small_data(std::uint64_t seed = 0, Scenario s = Scenario::base) {
  ScenarioConfig sc;
  sc.scenario = s;
  sc.n_source = 200;
  sc.n_target = 200;
  sc.seed = seed;
  return prepare_training_data(generate_scenario(sc), 5, derive_seed(seed, 4));
}

TrainConfig quick(TrainMode mode, int iterations = 20) {
  TrainConfig c;
  c.mode = mode;
  c.iterations = iterations;
  c.eval_every = iterations;
  c.probe.steps = 50;
  c.probe.max_per_domain = 100;
  return c;
}

std::vector<Matrix> values(const std::vector<ad::Parameter*>& ps) {
  std::vector<Matrix> out;
  for (auto* p : ps) out.push_back(p->value());
  return out;
}

bool same_trace(const std::vector<StepRecord>& a, const std::vector<StepRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].ce != b[i].ce || a[i].marginal_disc != b[i].marginal_disc || a[i].marginal_gen != b[i].marginal_gen ||
        a[i].conditional_disc != b[i].conditional_disc || a[i].conditional_gen != b[i].conditional_gen ||
        a[i].triplet != b[i].triplet || a[i].total != b[i].total) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(TrainConfig, DefaultsAndGating) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 80);
  EXPECT_EQ(c.adam.lr, 1e-4);
  EXPECT_EQ(c.per_class_count(), 20);
  EXPECT_TRUE(c.uses_marginal() && c.uses_conditional() && c.uses_triplet());
  c.mode = TrainMode::source_only;
  EXPECT_FALSE(c.uses_marginal() || c.uses_conditional() || c.uses_triplet());
  c.mode = TrainMode::marginal_only;
  EXPECT_TRUE(c.uses_marginal());
  EXPECT_FALSE(c.uses_conditional() || c.uses_triplet());
  c.mode = TrainMode::triplet_only;
  EXPECT_TRUE(c.uses_triplet());
  EXPECT_FALSE(c.uses_marginal() || c.uses_conditional());
  c.mode = TrainMode::dirl;
  c.weights.conditional = 0.0;
  EXPECT_FALSE(c.uses_conditional());
}

TEST(TrainConfig, ValidationNamesField) {
  auto expect_field = [](TrainConfig c, const char* field) {
    try {
      c.validate();
      ADD_FAILURE() << "expected ConfigError for " << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  TrainConfig c;
  c.batch_size = 81;
  expect_field(c, "batch_size");
  c = {};
  c.iterations = 0;
  expect_field(c, "iterations");
  c = {};
  c.pseudo.enabled = true;
  c.pseudo.warmup_iterations = 20000;
  expect_field(c, "warmup_iterations");
  c = {};
  c.adam.lr = -1;
  expect_field(c, "lr");
  c = {};
  c.labeled_target_fraction = 2;
  expect_field(c, "labeled_target_fraction");
  EXPECT_THROW(parse_mode("both"), ConfigError);
  EXPECT_EQ(parse_mode("triplet_only"), TrainMode::triplet_only);
}

TEST(PrepareData, MasksAllButKShot) {
  const auto d = small_data();
  EXPECT_EQ(d.target_train.labeled_indices().size(), 10u);
  EXPECT_TRUE(d.target_truth.fully_labeled());
  EXPECT_EQ(d.target_truth.features, d.target_train.features);
}

TEST(DeriveSeed, StreamsDiffer) {
  EXPECT_NE(derive_seed(0, 1), derive_seed(0, 2));
  EXPECT_NE(derive_seed(0, 1), derive_seed(1, 1));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

TEST(PseudoLabels, MatchesSortOracle) {
  const auto d = small_data(1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto bundle = init_bundle(NetworkSpec{}, seed);
    PseudoConfig pc;
    pc.top_n_per_class = 25;
    const auto pool = assign_pseudo_labels(bundle, d.target_train, pc);

    // Score every unlabeled row, group by argmax, sort by confidence.
    const Matrix proba = predict_proba(bundle, d.target_train.features);
    std::map<int, std::vector<std::pair<double, ad::Index>>> claims;
    for (ad::Index i = 0; i < d.target_train.size(); ++i) {
      if (d.target_train.is_labeled(i)) continue;
      const int k = proba(i, 1) > proba(i, 0) ? 1 : 0;
      claims[k].push_back({-proba(i, k), i});
    }
    ASSERT_EQ(pool.per_class.size(), 2u);
    for (int k = 0; k < 2; ++k) {
      auto expected = claims[k];
      std::sort(expected.begin(), expected.end());
      if (expected.size() > 25) expected.resize(25);
      const auto& got = pool.per_class[static_cast<std::size_t>(k)];
      ASSERT_EQ(got.size(), expected.size()) << "class " << k;
      for (std::size_t j = 0; j < got.size(); ++j) {
        EXPECT_EQ(got[j].index, expected[j].second);
        EXPECT_DOUBLE_EQ(got[j].confidence, -expected[j].first);
      }
    }
  }
}

TEST(PseudoLabels, TopTwoOfThreeClaimants) {
  // Predictions follow one input coordinate, so confidences are controlled.
  NetworkSpec spec;
  spec.input_dim = 1;
  spec.extractor_hidden = {};
  spec.feature_dim = 1;
  spec.head_hidden = {};
  auto bundle = init_bundle(spec, 0);
  bundle.extractor.parameters()[0]->assign(Matrix::Ones(1, 1));
  Matrix w(1, 2);
  w << 1, -1;
  bundle.classifier.parameters()[0]->assign(w);

  // p(class 0) = sigmoid(2x); pick x so that confidences are 0.9, 0.7, 0.6.
  auto x_for = [](double p) { return 0.5 * std::log(p / (1 - p)); };
  DomainDataset ds;
  ds.domain = Domain::target;
  ds.num_classes = 2;
  ds.features.resize(5, 1);
  ds.features << x_for(0.6), x_for(0.9), -2.0, x_for(0.7), -3.0;
  ds.labels.assign(5, kUnlabeled);

  PseudoConfig pc;
  pc.top_n_per_class = 2;
  const auto pool = assign_pseudo_labels(bundle, ds, pc);
  ASSERT_EQ(pool.per_class[0].size(), 2u);
  EXPECT_EQ(pool.per_class[0][0].index, 1);
  EXPECT_NEAR(pool.per_class[0][0].confidence, 0.9, 1e-12);
  EXPECT_EQ(pool.per_class[0][1].index, 3);
  EXPECT_NEAR(pool.per_class[0][1].confidence, 0.7, 1e-12);
  EXPECT_EQ(pool.per_class[1].size(), 2u);

  pc.top_n_per_class = 10;
  const auto all = assign_pseudo_labels(bundle, ds, pc);
  EXPECT_EQ(all.per_class[0].size(), 3u);
  EXPECT_EQ(all.size(), 5u);
  EXPECT_TRUE(all.empty_classes().empty());
}

TEST(PseudoLabels, EntriesAgreeWithArgmaxAndAreDeterministic) {
  const auto d = small_data(2);
  const auto bundle = init_bundle(NetworkSpec{}, 9);
  const auto a = assign_pseudo_labels(bundle, d.target_train, {true, 0, 50, 1});
  const auto b = assign_pseudo_labels(bundle, d.target_train, {true, 0, 50, 1});
  const auto pred = predict(bundle, d.target_train.features);
  for (std::size_t k = 0; k < a.per_class.size(); ++k) {
    ASSERT_EQ(a.per_class[k].size(), b.per_class[k].size());
    for (std::size_t j = 0; j < a.per_class[k].size(); ++j) {
      EXPECT_EQ(a.per_class[k][j].index, b.per_class[k][j].index);
      EXPECT_EQ(pred[static_cast<std::size_t>(a.per_class[k][j].index)], static_cast<int>(k));
      EXPECT_FALSE(d.target_train.is_labeled(a.per_class[k][j].index));
    }
  }
}

TEST(TrainStep, SourceOnlyLeavesDiscriminatorsUntouched) {
  const auto d = small_data();
  const auto cfg = quick(TrainMode::source_only);
  auto state = init_state(cfg, d);
  const auto disc_before = values(state.bundle.domain_params());
  const auto cls_before = values(state.bundle.all_class_params());
  const auto g_before = values(state.bundle.extractor_params());
  for (int i = 0; i < 5; ++i) {
    const auto rec = train_step(state, cfg, sample_step_batches(state, cfg, d));
    EXPECT_TRUE(rec.ce.has_value());
    EXPECT_FALSE(rec.marginal_disc || rec.marginal_gen || rec.conditional_disc || rec.conditional_gen || rec.triplet);
  }
  EXPECT_EQ(values(state.bundle.domain_params()), disc_before);
  EXPECT_EQ(values(state.bundle.all_class_params()), cls_before);
  EXPECT_NE(values(state.bundle.extractor_params()), g_before);
}

TEST(TrainStep, DirlStepMovesEveryHead) {
  const auto d = small_data();
  const auto cfg = quick(TrainMode::dirl);
  auto state = init_state(cfg, d);
  auto before = state.bundle;
  const auto rec = train_step(state, cfg, sample_step_batches(state, cfg, d));
  EXPECT_TRUE(rec.ce && rec.marginal_disc && rec.marginal_gen && rec.conditional_disc && rec.conditional_gen &&
              rec.triplet);
  EXPECT_NE(values(state.bundle.extractor_params()), values(before.extractor_params()));
  EXPECT_NE(values(state.bundle.classifier_params()), values(before.classifier_params()));
  EXPECT_NE(values(state.bundle.domain_params()), values(before.domain_params()));
  for (int k = 0; k < 2; ++k) {
    EXPECT_NE(values(state.bundle.class_params(k)), values(before.class_params(k)));
  }
  EXPECT_EQ(state.iteration, 1);
}

TEST(TrainStep, DegenerateFeaturesAbortWithDiagnostic) {
  const auto d = small_data();
  const auto cfg = quick(TrainMode::triplet_only);
  auto state = init_state(cfg, d);
  for (auto* p : state.bundle.extractor_params()) p->assign(Matrix::Zero(p->rows(), p->cols()));
  try {
    train_step(state, cfg, sample_step_batches(state, cfg, d));
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.diagnostic().iteration, 0);
    EXPECT_EQ(e.diagnostic().term, "generator");
    EXPECT_FALSE(e.diagnostic().parameter_norms.empty());
  }
}

TEST(TrainStep, ClasswiseBatchOnlyWhenConditionalActive) {
  const auto d = small_data();
  for (auto mode : {TrainMode::source_only, TrainMode::marginal_only, TrainMode::triplet_only}) {
    const auto cfg = quick(mode);
    auto state = init_state(cfg, d);
    EXPECT_FALSE(sample_step_batches(state, cfg, d).classwise.has_value());
  }
  const auto cfg = quick(TrainMode::dirl);
  auto state = init_state(cfg, d);
  const auto b = sample_step_batches(state, cfg, d);
  ASSERT_TRUE(b.classwise.has_value());
  EXPECT_EQ(b.classwise->groups.size(), 2u);
  EXPECT_EQ(b.classwise->groups[0].source_x.rows(), 20);
}

TEST(RunTraining, OneIterationOneStep) {
  const auto d = small_data();
  auto cfg = quick(TrainMode::dirl, 1);
  const auto [bundle, report] = run_training(d, cfg);
  EXPECT_EQ(report.steps.size(), 1u);
  EXPECT_EQ(report.iterations_run, 1);
  EXPECT_TRUE(report.final_metrics.marginal_probe.has_value());
}

TEST(RunTraining, SnapshotSchedule) {
  const auto d = small_data();
  auto cfg = quick(TrainMode::source_only, 1000);
  cfg.eval_every = 100;
  int calls = 0;
  const auto report = run_training(d, cfg, [&](const EvalSnapshot&, const ModelBundle&) { ++calls; }).second;
  ASSERT_EQ(report.snapshots.size(), 10u);
  EXPECT_EQ(calls, 10);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(report.snapshots[i].iteration, 100 * static_cast<int>(i + 1));
  EXPECT_FALSE(report.snapshots.front().marginal_probe.has_value());
  EXPECT_TRUE(report.snapshots.back().marginal_probe.has_value());
  EXPECT_EQ(report.final_metrics.iteration, 1000);
}

TEST(RunTraining, Deterministic) {
  const auto d = small_data(3);
  auto cfg = quick(TrainMode::dirl, 50);
  cfg.seed = 3;
  const auto a = run_training(d, cfg);
  const auto b = run_training(d, cfg);
  EXPECT_TRUE(same_trace(a.second.steps, b.second.steps));
  EXPECT_TRUE(parameters_equal(a.first, b.first));
  EXPECT_EQ(a.second.final_metrics.marginal_probe, b.second.final_metrics.marginal_probe);
  cfg.seed = 4;
  EXPECT_FALSE(same_trace(a.second.steps, run_training(d, cfg).second.steps));
}

TEST(RunTraining, MarginalOnlyWithoutMarginalWeightIsSourceOnly) {
  const auto d = small_data(5);
  auto so = quick(TrainMode::source_only, 60);
  auto mo = quick(TrainMode::marginal_only, 60);
  mo.weights.marginal = 0.0;
  const auto a = run_training(d, so);
  const auto b = run_training(d, mo);
  EXPECT_TRUE(same_trace(a.second.steps, b.second.steps));
  EXPECT_TRUE(parameters_equal(a.first, b.first));
}

TEST(RunTraining, PseudoLabelsRefreshAfterWarmup) {
  const auto d = small_data(6);
  auto cfg = quick(TrainMode::dirl, 30);
  cfg.pseudo = {true, 10, 20, 10};
  const auto report = run_training(d, cfg).second;
  EXPECT_EQ(report.steps.size(), 30u);
  EXPECT_TRUE(report.steps.back().triplet.has_value());
}

TEST(RunTraining, EarlyStopStopsOnPlateau) {
  const auto d = small_data(7);
  auto cfg = quick(TrainMode::source_only, 3000);
  cfg.eval_every = 10;
  cfg.early_stop_patience = 20;
  cfg.adam.lr = 1e-9;
  const auto report = run_training(d, cfg).second;
  EXPECT_TRUE(report.early_stopped);
  EXPECT_LT(report.iterations_run, 3000);
  EXPECT_EQ(report.final_metrics.iteration, report.iterations_run);
}

TEST(RunTraining, ClassCountMismatchIsConfigError) {
  auto d = small_data();
  auto cfg = quick(TrainMode::dirl);
  cfg.network.num_classes = 3;
  EXPECT_THROW(run_training(d, cfg), ConfigError);
}

TEST(Evaluate, ProbesLeaveParametersUnchanged) {
  const auto d = small_data();
  const auto cfg = quick(TrainMode::dirl);
  const auto bundle = init_bundle(cfg.network, 1);
  const auto copy = bundle;
  const auto snap = evaluate_snapshot(bundle, d, cfg, 0, true);
  EXPECT_TRUE(parameters_equal(bundle, copy));
  ASSERT_TRUE(snap.conditional_probe.has_value());
  EXPECT_EQ(snap.conditional_probe->per_class.size(), 2u);
  EXPECT_GE(snap.target_accuracy, 0.0);
  EXPECT_LE(snap.target_accuracy, 1.0);
  EXPECT_GE(snap.silhouette, -1.0);
  EXPECT_LE(snap.silhouette, 1.0);
}
