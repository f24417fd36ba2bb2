#include "dirl/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace dirl {

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::source_only: return "source_only";
    case TrainMode::marginal_only: return "marginal_only";
    case TrainMode::triplet_only: return "triplet_only";
    case TrainMode::dirl: return "dirl";
  }
  return "?";
}

TrainMode parse_mode(std::string_view s) {
  for (TrainMode m : {TrainMode::source_only, TrainMode::marginal_only, TrainMode::triplet_only, TrainMode::dirl}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError(fmt::format(
      "unknown mode '{}' (expected source_only, marginal_only, triplet_only or dirl)", s));
}

void PseudoConfig::validate(int iterations) const {
  if (!enabled) return;
  if (warmup_iterations < 0 || warmup_iterations >= iterations) {
    throw ConfigError(fmt::format("pseudo.warmup_iterations must lie in [0, iterations={}), got {}", iterations,
                                  warmup_iterations));
  }
  if (top_n_per_class < 1) {
    throw ConfigError(fmt::format("pseudo.top_n_per_class must be >= 1, got {}", top_n_per_class));
  }
  if (refresh_every < 1) {
    throw ConfigError(fmt::format("pseudo.refresh_every must be >= 1, got {}", refresh_every));
  }
}

std::size_t PseudoLabelPool::size() const {
  std::size_t n = 0;
  for (const auto& c : per_class) n += c.size();
  return n;
}

std::vector<int> PseudoLabelPool::empty_classes() const {
  std::vector<int> out;
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    if (per_class[k].empty()) out.push_back(static_cast<int>(k));
  }
  return out;
}

void TrainConfig::validate() const {
  if (iterations <= 0) throw ConfigError(fmt::format("iterations must be positive, got {}", iterations));
  if (batch_size <= 0 || batch_size % 2 != 0) {
    throw ConfigError(fmt::format("batch_size must be positive and even, got {}", batch_size));
  }
  if (!(labeled_target_fraction >= 0.0 && labeled_target_fraction <= 1.0)) {
    throw ConfigError(fmt::format("labeled_target_fraction must lie in [0, 1], got {}", labeled_target_fraction));
  }
  if (k_shot < 0) throw ConfigError(fmt::format("k_shot must be non-negative, got {}", k_shot));
  if (class_batch_per_class < 0) {
    throw ConfigError(fmt::format("class_batch_per_class must be non-negative, got {}", class_batch_per_class));
  }
  if (disc_steps < 1) throw ConfigError(fmt::format("disc_steps must be >= 1, got {}", disc_steps));
  if (eval_every <= 0) throw ConfigError(fmt::format("eval_every must be positive, got {}", eval_every));
  if (early_stop_patience < 0) {
    throw ConfigError(fmt::format("early_stop_patience must be non-negative, got {}", early_stop_patience));
  }
  if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) {
    throw ConfigError(fmt::format("lr must be finite and positive, got {}", adam.lr));
  }
  weights.validate();
  triplet.validate();
  network.validate();
  probe.validate();
  pseudo.validate(iterations);
}

int TrainConfig::per_class_count() const {
  if (class_batch_per_class > 0) return class_batch_per_class;
  return std::max(1, batch_size / (2 * network.num_classes));
}

bool TrainConfig::uses_marginal() const {
  return (mode == TrainMode::marginal_only || mode == TrainMode::dirl) && weights.marginal > 0.0;
}

bool TrainConfig::uses_conditional() const { return mode == TrainMode::dirl && weights.conditional > 0.0; }

bool TrainConfig::uses_triplet() const {
  return (mode == TrainMode::triplet_only || mode == TrainMode::dirl) && weights.triplet > 0.0;
}

TrainingData prepare_training_data(DomainSplit split, int k_shot, std::uint64_t selection_seed) {
  TrainingData data;
  data.target_train = select_labeled_target(split.target_train, k_shot, selection_seed);
  data.target_truth = std::move(split.target_train);
  data.source = std::move(split.source);
  data.target_test = std::move(split.target_test);
  return data;
}

TrainingAborted::TrainingAborted(AbortDiagnostic diag)
    : Error(fmt::format("training aborted at iteration {} in term '{}': {}", diag.iteration, diag.term,
                        diag.message)),
      diag_(std::move(diag)) {}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over seed and stream.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t { kInitStream = 1, kBatchStream = 2, kProbeStream = 3 };

DomainDataset labeled_subset(const DomainDataset& ds, std::string name) {
  const auto rows = ds.labeled_indices();
  DomainDataset out;
  out.features = gather_rows(ds.features, rows);
  out.labels.reserve(rows.size());
  for (ad::Index i : rows) out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  out.domain = ds.domain;
  out.num_classes = ds.num_classes;
  out.name = std::move(name);
  return out;
}

DomainDataset concat_datasets(const DomainDataset& a, const DomainDataset& b, std::string name) {
  DomainDataset out;
  out.features.resize(a.size() + b.size(), a.size() > 0 ? a.dim() : b.dim());
  if (a.size() > 0) out.features.topRows(a.size()) = a.features;
  if (b.size() > 0) out.features.bottomRows(b.size()) = b.features;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.domain = a.domain;
  out.num_classes = a.num_classes;
  out.name = std::move(name);
  return out;
}

std::vector<std::pair<std::string, double>> parameter_norms(ModelBundle& bundle) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& np : bundle.named_parameters()) {
    const double n = np.param->value().norm();
    out.emplace_back(np.name, n);
  }
  return out;
}

template <class F>
auto guarded(TrainState& state, const char* term, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const NonFiniteError& e) {
    throw TrainingAborted({state.iteration, term, e.what(), parameter_norms(state.bundle)});
  } catch (const DegenerateFeatureError& e) {
    throw TrainingAborted({state.iteration, term, e.what(), parameter_norms(state.bundle)});
  }
}

void refresh_pseudo(TrainState& state, const TrainConfig& cfg, const TrainingData& data) {
  state.pseudo = assign_pseudo_labels(state.bundle, data.target_train, cfg.pseudo);
  DomainDataset rows;
  rows.domain = Domain::target;
  rows.num_classes = data.target_train.num_classes;
  rows.name = "pseudo";
  rows.features.resize(static_cast<ad::Index>(state.pseudo.size()), data.target_train.dim());
  ad::Index r = 0;
  for (std::size_t k = 0; k < state.pseudo.per_class.size(); ++k) {
    for (const auto& entry : state.pseudo.per_class[k]) {
      rows.features.row(r++) = data.target_train.features.row(entry.index);
      rows.labels.push_back(static_cast<int>(k));
    }
  }
  state.pseudo_rows = std::move(rows);
  state.class_pool = concat_datasets(labeled_subset(data.target_train, "target_labeled"), state.pseudo_rows,
                                     "class_pool");
}

bool pseudo_active(const TrainState& state, const TrainConfig& cfg) {
  return cfg.pseudo.enabled && state.iteration >= cfg.pseudo.warmup_iterations;
}

std::vector<ad::Parameter*> join(std::vector<ad::Parameter*> a, const std::vector<ad::Parameter*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

PseudoLabelPool assign_pseudo_labels(const ModelBundle& bundle, const DomainDataset& target,
                                     const PseudoConfig& cfg) {
  PseudoLabelPool pool;
  pool.per_class.resize(static_cast<std::size_t>(bundle.num_classes()));
  const auto rows = target.unlabeled_indices();
  if (rows.empty()) return pool;
  const Matrix proba = predict_proba(bundle, gather_rows(target.features, rows));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Eigen::Index best = 0;
    const double conf = proba.row(static_cast<ad::Index>(r)).maxCoeff(&best);
    pool.per_class[static_cast<std::size_t>(best)].push_back({rows[r], conf});
  }
  const auto limit = static_cast<std::size_t>(std::max(cfg.top_n_per_class, 0));
  for (auto& entries : pool.per_class) {
    std::stable_sort(entries.begin(), entries.end(), [](const PseudoEntry& a, const PseudoEntry& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      return a.index < b.index;
    });
    if (entries.size() > limit) entries.resize(limit);
  }
  return pool;
}

TrainState init_state(const TrainConfig& cfg, const TrainingData& data) {
  cfg.validate();
  data.source.validate();
  data.target_train.validate();
  if (data.source.num_classes != cfg.network.num_classes || data.target_train.num_classes != cfg.network.num_classes) {
    throw ConfigError(fmt::format("datasets have {} / {} classes but the network expects {}", data.source.num_classes,
                                  data.target_train.num_classes, cfg.network.num_classes));
  }
  if (data.source.dim() != cfg.network.input_dim) {
    throw ConfigError(fmt::format("datasets have {} input columns but the network expects {}", data.source.dim(),
                                  cfg.network.input_dim));
  }
  TrainState state;
  state.bundle = init_bundle(cfg.network, derive_seed(cfg.seed, kInitStream));
  state.rng.seed(derive_seed(cfg.seed, kBatchStream));
  state.class_pool = labeled_subset(data.target_train, "class_pool");
  state.pseudo_rows.domain = Domain::target;
  state.pseudo_rows.num_classes = data.target_train.num_classes;
  state.pseudo_rows.features.resize(0, data.target_train.dim());
  return state;
}

StepBatches sample_step_batches(TrainState& state, const TrainConfig& cfg, const TrainingData& data) {
  StepBatches out;
  out.mixed = sample_mixed_batch(data.source, data.target_train, cfg.batch_size, cfg.labeled_target_fraction,
                                 state.rng);
  const bool pseudo = pseudo_active(state, cfg);
  if (pseudo && (cfg.uses_conditional() || cfg.uses_triplet())) {
    add_pseudo_rows(out.mixed, state.pseudo_rows, cfg.batch_size / 4, state.rng);
  }
  if (cfg.uses_conditional()) {
    out.classwise = sample_classwise_batch(data.source, state.class_pool, cfg.per_class_count(), state.rng);
  }
  return out;
}

StepRecord train_step(TrainState& state, const TrainConfig& cfg, const StepBatches& batches) {
  StepRecord rec;
  rec.iteration = state.iteration;
  ModelBundle& b = state.bundle;
  const MiniBatch& mb = batches.mixed;
  const Matrix target_x = mb.target_x();

  // (a) domain discriminator, g frozen.
  if (cfg.uses_marginal()) {
    rec.marginal_disc = guarded(state, "marginal_disc", [&] {
      double first = 0.0;
      for (int rep = 0; rep < cfg.disc_steps; ++rep) {
        ad::Tape tape;
        const auto zs = features(b, tape, tape.constant(mb.source_x), Grad::frozen);
        const auto zt = features(b, tape, tape.constant(target_x), Grad::frozen);
        const auto loss = marginal_disc_loss(discriminate_domain(b, tape, zs, Grad::track),
                                             discriminate_domain(b, tape, zt, Grad::track));
        tape.backward(loss);
        const auto params = b.domain_params();
        ad::adam_step(params, cfg.adam);
        if (rep == 0) first = loss.item();
      }
      return first;
    });
  }

  // (b) class discriminators, g frozen; only classes present in the batch.
  if (cfg.uses_conditional() && batches.classwise) {
    rec.skipped_classes = batches.classwise->skipped_classes;
    if (!batches.classwise->groups.empty()) {
      rec.conditional_disc = guarded(state, "conditional_disc", [&] {
        double total = 0.0;
        for (const auto& g : batches.classwise->groups) {
          for (int rep = 0; rep < cfg.disc_steps; ++rep) {
            ad::Tape tape;
            const auto zs = features(b, tape, tape.constant(g.source_x), Grad::frozen);
            const auto zt = features(b, tape, tape.constant(g.target_x), Grad::frozen);
            const auto loss = conditional_disc_loss(discriminate_class(b, g.label, tape, zs, Grad::track),
                                                    discriminate_class(b, g.label, tape, zt, Grad::track));
            tape.backward(loss);
            const auto params = b.class_params(g.label);
            ad::adam_step(params, cfg.adam);
            if (rep == 0) total += loss.item();
          }
        }
        return total;
      });
    }
  }

  // (c) g and f, every discriminator frozen.
  rec.total = guarded(state, "generator", [&] {
    ad::Tape tape;
    GeneratorTerms terms;
    const auto zs = features(b, tape, tape.constant(mb.source_x), Grad::track);
    const ad::Index n_lab = mb.labeled_target_x.rows();
    ad::Tensor zt;
    if (mb.target_count() > 0) zt = features(b, tape, tape.constant(target_x), Grad::track);

    ad::Tensor tgt_logits;
    if (cfg.target_labels_in_ce && n_lab > 0) {
      tgt_logits = classify(b, tape, ad::slice_rows(zt, 0, n_lab), Grad::track);
    }
    if (cfg.weights.ce > 0.0) {
      terms.ce = supervised_ce_loss(classify(b, tape, zs, Grad::track), mb.source_y, tgt_logits,
                                    mb.labeled_target_y);
      rec.ce = terms.ce.item();
    }
    if (cfg.uses_marginal()) {
      const auto dt = discriminate_domain(b, tape, zt, Grad::frozen);
      terms.marginal_gen =
          cfg.gradient_reversal
              ? ad::scale(marginal_disc_loss(discriminate_domain(b, tape, zs, Grad::frozen), dt), -1.0)
              : marginal_gen_loss(dt);
      rec.marginal_gen = terms.marginal_gen.item();
    }
    if (cfg.uses_conditional() && batches.classwise && !batches.classwise->groups.empty()) {
      double sum = 0.0;
      for (const auto& g : batches.classwise->groups) {
        const auto ztk = features(b, tape, tape.constant(g.target_x), Grad::track);
        const auto ct = discriminate_class(b, g.label, tape, ztk, Grad::frozen);
        if (cfg.gradient_reversal) {
          const auto zsk = features(b, tape, tape.constant(g.source_x), Grad::track);
          terms.conditional_gen.push_back(
              ad::scale(conditional_disc_loss(discriminate_class(b, g.label, tape, zsk, Grad::frozen), ct), -1.0));
        } else {
          terms.conditional_gen.push_back(conditional_gen_loss(ct));
        }
        sum += terms.conditional_gen.back().item();
      }
      rec.conditional_gen = sum;
    }
    if (cfg.uses_triplet()) {
      std::vector<ad::Tensor> parts{zs};
      std::vector<int> labels = mb.source_y;
      if (n_lab > 0) {
        parts.push_back(ad::slice_rows(zt, 0, n_lab));
        labels.insert(labels.end(), mb.labeled_target_y.begin(), mb.labeled_target_y.end());
      }
      if (mb.pseudo_target_x.rows() > 0) {
        parts.push_back(features(b, tape, tape.constant(mb.pseudo_target_x), Grad::track));
        labels.insert(labels.end(), mb.pseudo_target_y.begin(), mb.pseudo_target_y.end());
      }
      const auto z = parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
      terms.triplet = triplet_distribution_loss(ad::l2_normalize(z), labels, cfg.triplet);
      rec.triplet = terms.triplet.item();
    }
    const auto total = total_dirl_loss(tape, terms, cfg.weights);
    if (tape.requires_grad(total.node_id())) {
      tape.backward(total);
      const auto params = join(b.extractor_params(), b.classifier_params());
      ad::adam_step(params, cfg.adam);
    }
    return total.item();
  });

  state.iteration += 1;
  return rec;
}

EvalSnapshot evaluate_snapshot(const ModelBundle& bundle, const TrainingData& data, const TrainConfig& cfg,
                               int iteration, bool with_probes) {
  EvalSnapshot snap;
  snap.iteration = iteration;
  snap.target_accuracy = accuracy(bundle, data.target_test);
  snap.source_accuracy = accuracy(bundle, data.source);
  snap.target_recall = class_recall(bundle, data.target_test);

  const Matrix zs = features(bundle, data.source.features);
  const Matrix zt = features(bundle, data.target_test.features);
  Matrix both(zs.rows() + zt.rows(), zs.cols());
  both.topRows(zs.rows()) = zs;
  both.bottomRows(zt.rows()) = zt;
  std::vector<int> labels = data.source.labels;
  labels.insert(labels.end(), data.target_test.labels.begin(), data.target_test.labels.end());
  snap.silhouette = silhouette_score(both, labels);
  snap.silhouette_source = silhouette_score(zs, data.source.labels);
  auto target_classes = data.target_test.labels;
  std::sort(target_classes.begin(), target_classes.end());
  const bool multi = std::unique(target_classes.begin(), target_classes.end()) - target_classes.begin() > 1;
  snap.silhouette_target = multi ? silhouette_score(zt, data.target_test.labels) : 0.0;

  if (with_probes) {
    ProbeConfig probe = cfg.probe;
    probe.seed = derive_seed(cfg.seed ^ cfg.probe.seed, kProbeStream);
    snap.marginal_probe = marginal_probe(bundle, data.source, data.target_truth, probe);
    snap.conditional_probe = conditional_probe(bundle, data.source, data.target_truth, probe);
  }
  return snap;
}

std::pair<ModelBundle, RunReport> run_training(const TrainingData& data, const TrainConfig& cfg,
                                               const SnapshotCallback& on_snapshot) {
  TrainState state = init_state(cfg, data);
  RunReport report;
  report.steps.reserve(static_cast<std::size_t>(cfg.iterations));

  // Early stopping watches accuracy on every labeled training row.
  const DomainDataset monitor =
      concat_datasets(data.source, labeled_subset(data.target_train, "target_labeled"), "monitor");
  double best_monitor = -1.0;
  int best_iteration = 0;

  while (state.iteration < cfg.iterations) {
    if (pseudo_active(state, cfg) &&
        (state.iteration - cfg.pseudo.warmup_iterations) % cfg.pseudo.refresh_every == 0) {
      refresh_pseudo(state, cfg, data);
      const auto empty = state.pseudo.empty_classes();
      report.empty_pseudo_classes.insert(report.empty_pseudo_classes.end(), empty.begin(), empty.end());
    }
    const StepBatches batches = sample_step_batches(state, cfg, data);
    report.steps.push_back(train_step(state, cfg, batches));

    const bool last = state.iteration == cfg.iterations;
    if (state.iteration % cfg.eval_every != 0) continue;
    auto snap = evaluate_snapshot(state.bundle, data, cfg, state.iteration, cfg.probes_in_snapshots || last);
    if (on_snapshot) on_snapshot(snap, state.bundle);
    report.snapshots.push_back(std::move(snap));
    if (cfg.early_stop_patience > 0 && !last) {
      const double acc = accuracy(state.bundle, monitor);
      if (acc > best_monitor) {
        best_monitor = acc;
        best_iteration = state.iteration;
      } else if (state.iteration - best_iteration >= cfg.early_stop_patience) {
        report.early_stopped = true;
        break;
      }
    }
  }
  report.iterations_run = state.iteration;
  const bool have_final = !report.snapshots.empty() && report.snapshots.back().iteration == state.iteration &&
                          report.snapshots.back().marginal_probe.has_value();
  report.final_metrics =
      have_final ? report.snapshots.back() : evaluate_snapshot(state.bundle, data, cfg, state.iteration, true);
  return {std::move(state.bundle), std::move(report)};
}

}  // namespace dirl
