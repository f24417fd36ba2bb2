#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dirl/batching.hpp"
#include "dirl/error.hpp"
#include "dirl/evaluation.hpp"
#include "dirl/losses.hpp"
#include "dirl/networks.hpp"
#include "dirl/synthetic_data.hpp"

namespace dirl {

/// Which loss terms a run optimizes. source_only: cross-entropy.
/// marginal_only: + domain adversarial terms. triplet_only: + triplet term.
/// dirl: everything, including the class-conditional discriminators.
enum class TrainMode { source_only, marginal_only, triplet_only, dirl };

std::string_view to_string(TrainMode m);
TrainMode parse_mode(std::string_view s);

struct PseudoConfig {
  bool enabled = false;
  int warmup_iterations = 4000;
  int top_n_per_class = 50;
  int refresh_every = 1000;

  void validate(int iterations) const;
};

struct PseudoEntry {
  ad::Index index = 0;
  double confidence = 0.0;
};

/// Most confident unlabeled target rows per predicted class, sorted by
/// descending confidence (ties by lower index).
struct PseudoLabelPool {
  std::vector<std::vector<PseudoEntry>> per_class;

  std::size_t size() const;
  std::vector<int> empty_classes() const;
};

struct TrainConfig {
  TrainMode mode = TrainMode::dirl;
  LossWeights weights;
  ad::AdamConfig adam{1e-4};
  int iterations = 10000;
  int batch_size = 80;
  /// Share of the target half of each mini-batch drawn from labeled rows.
  double labeled_target_fraction = 0.25;
  /// Labeled target examples per class.
  int k_shot = 5;
  /// Rows per domain per class for the class discriminators; 0 means
  /// batch_size / (2 K).
  int class_batch_per_class = 0;
  /// Feed labeled target rows into the cross-entropy term as well.
  bool target_labels_in_ce = false;
  /// Generator side of the adversarial terms: false uses inverted labels on
  /// target rows, true reverses the discriminator loss over both domains.
  bool gradient_reversal = false;
  /// Discriminator updates per generator update, on the same batch.
  int disc_steps = 1;
  PseudoConfig pseudo;
  TripletConfig triplet;
  NetworkSpec network;
  ProbeConfig probe;
  std::uint64_t seed = 0;
  int eval_every = 1000;
  /// Run the (slower) discrepancy probes at every snapshot, not just the end.
  bool probes_in_snapshots = false;
  /// Stop when labeled-train accuracy has not improved for this many
  /// iterations, checked at snapshots. 0 disables early stopping.
  int early_stop_patience = 0;

  void validate() const;
  int per_class_count() const;
  bool uses_marginal() const;
  bool uses_conditional() const;
  bool uses_triplet() const;
};

/// Datasets one run consumes.
struct TrainingData {
  DomainDataset source;
  /// Target train pool with all but k_shot labels per class masked.
  DomainDataset target_train;
  /// Same rows with every label visible; only used for probes.
  DomainDataset target_truth;
  DomainDataset target_test;
};

TrainingData prepare_training_data(DomainSplit split, int k_shot, std::uint64_t selection_seed);

/// Loss values of one iteration; nullopt marks an inactive term.
struct StepRecord {
  int iteration = 0;
  std::optional<double> ce;
  std::optional<double> marginal_disc;
  std::optional<double> marginal_gen;
  std::optional<double> conditional_disc;
  std::optional<double> conditional_gen;
  std::optional<double> triplet;
  double total = 0.0;
  std::vector<int> skipped_classes;
};

struct EvalSnapshot {
  int iteration = 0;
  double target_accuracy = 0.0;
  double source_accuracy = 0.0;
  /// Silhouette of g-features over source + target test, and per domain.
  double silhouette = 0.0;
  double silhouette_source = 0.0;
  double silhouette_target = 0.0;
  std::vector<std::optional<double>> target_recall;
  std::optional<double> marginal_probe;
  std::optional<ConditionalProbeResult> conditional_probe;
};

struct RunReport {
  std::vector<StepRecord> steps;
  std::vector<EvalSnapshot> snapshots;
  EvalSnapshot final_metrics;
  int iterations_run = 0;
  bool early_stopped = false;
  std::vector<int> empty_pseudo_classes;
};

struct AbortDiagnostic {
  int iteration = 0;
  std::string term;
  std::string message;
  std::vector<std::pair<std::string, double>> parameter_norms;
};

/// Raised when a loss becomes non-finite or features degenerate.
class TrainingAborted : public Error {
 public:
  explicit TrainingAborted(AbortDiagnostic diag);
  const AbortDiagnostic& diagnostic() const { return diag_; }

 private:
  AbortDiagnostic diag_;
};

struct TrainState {
  ModelBundle bundle;
  Rng rng;
  int iteration = 0;
  PseudoLabelPool pseudo;
  /// Rows of the pseudo pool with their assigned labels.
  DomainDataset pseudo_rows;
  /// Labeled target rows plus pseudo rows; feeds the class discriminators.
  DomainDataset class_pool;
};

/// Deterministic per-purpose seed derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

TrainState init_state(const TrainConfig& cfg, const TrainingData& data);

/// Scores every unlabeled row of `target` by the max softmax probability of
/// f(g(x)) and keeps the top_n rows per predicted class.
PseudoLabelPool assign_pseudo_labels(const ModelBundle& bundle, const DomainDataset& target,
                                     const PseudoConfig& cfg);

struct StepBatches {
  MiniBatch mixed;
  std::optional<ClassBatch> classwise;
};

/// Draws this iteration's batches from `state.rng`. The class-wise batch is
/// only drawn when the conditional term is active.
StepBatches sample_step_batches(TrainState& state, const TrainConfig& cfg, const TrainingData& data);

/// One alternation: domain discriminator update, class discriminator
/// updates, then one generator update of g and f with every discriminator
/// frozen. Throws TrainingAborted on a non-finite loss.
StepRecord train_step(TrainState& state, const TrainConfig& cfg, const StepBatches& batches);

EvalSnapshot evaluate_snapshot(const ModelBundle& bundle, const TrainingData& data, const TrainConfig& cfg,
                               int iteration, bool with_probes);

using SnapshotCallback = std::function<void(const EvalSnapshot&, const ModelBundle&)>;

std::pair<ModelBundle, RunReport> run_training(const TrainingData& data, const TrainConfig& cfg,
                                               const SnapshotCallback& on_snapshot = {});

}  // namespace dirl
