#include "dirl/evaluation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "dirl/error.hpp"
#include "parse_util.hpp"

namespace dirl {

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (labels.empty()) throw ContractError("accuracy: empty dataset");
  if (predicted.size() != labels.size()) {
    throw DimensionError(fmt::format("accuracy: {} predictions for {} labels", predicted.size(), labels.size()));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const ModelBundle& bundle, const DomainDataset& dataset) {
  if (dataset.size() == 0) throw ContractError("accuracy: empty dataset");
  if (!dataset.fully_labeled()) {
    throw ContractError(fmt::format("accuracy: dataset '{}' has unlabeled rows", dataset.name));
  }
  return accuracy(predict(bundle, dataset.features), dataset.labels);
}

std::vector<std::optional<double>> class_recall(const ModelBundle& bundle, const DomainDataset& dataset) {
  const auto pred = predict(bundle, dataset.features);
  std::vector<std::optional<double>> out(static_cast<std::size_t>(dataset.num_classes));
  for (int k = 0; k < dataset.num_classes; ++k) {
    std::size_t members = 0, hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (dataset.labels[i] != k) continue;
      ++members;
      hits += pred[i] == k ? 1 : 0;
    }
    if (members > 0) out[static_cast<std::size_t>(k)] = static_cast<double>(hits) / static_cast<double>(members);
  }
  return out;
}

double silhouette_score(const Matrix& embeddings, std::span<const int> labels) {
  const ad::Index n = embeddings.rows();
  if (static_cast<ad::Index>(labels.size()) != n) {
    throw DimensionError(fmt::format("silhouette_score: {} labels for {} rows", labels.size(), n));
  }
  std::map<int, int> cluster_of;
  for (int y : labels) cluster_of.emplace(y, 0);
  if (cluster_of.size() < 2) throw ContractError("silhouette_score: needs at least two classes");
  int next = 0;
  for (auto& [label, idx] : cluster_of) idx = next++;
  const std::size_t k = cluster_of.size();
  std::vector<int> cluster(static_cast<std::size_t>(n));
  std::vector<double> sizes(k, 0.0);
  for (ad::Index i = 0; i < n; ++i) {
    cluster[static_cast<std::size_t>(i)] = cluster_of[labels[static_cast<std::size_t>(i)]];
    sizes[static_cast<std::size_t>(cluster[static_cast<std::size_t>(i)])] += 1.0;
  }

  // dist_sum(i, c): total distance from row i to every row of cluster c.
  Eigen::MatrixXd dist_sum = Eigen::MatrixXd::Zero(n, static_cast<ad::Index>(k));
  for (ad::Index i = 0; i < n; ++i) {
    for (ad::Index j = i + 1; j < n; ++j) {
      const double d = (embeddings.row(i) - embeddings.row(j)).norm();
      dist_sum(i, cluster[static_cast<std::size_t>(j)]) += d;
      dist_sum(j, cluster[static_cast<std::size_t>(i)]) += d;
    }
  }
  double total = 0.0;
  for (ad::Index i = 0; i < n; ++i) {
    const int own = cluster[static_cast<std::size_t>(i)];
    const double own_size = sizes[static_cast<std::size_t>(own)];
    if (own_size < 2.0) continue;
    const double a = dist_sum(i, own) / (own_size - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (static_cast<int>(c) == own) continue;
      b = std::min(b, dist_sum(i, static_cast<ad::Index>(c)) / sizes[c]);
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

void ProbeConfig::validate() const {
  if (steps <= 0) throw ConfigError("probe steps must be positive");
  if (!(lr > 0.0)) throw ConfigError("probe lr must be positive");
  if (batch_size <= 0) throw ConfigError("probe batch_size must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("probe train_fraction must lie in (0, 1)");
  if (max_per_domain < 2) throw ConfigError("probe max_per_domain must be at least 2");
}

namespace {

std::vector<ad::Index> subsample(ad::Index n, ad::Index keep, Rng& rng) {
  std::vector<ad::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (ad::Index i = 0; i < keep; ++i) {
    std::uniform_int_distribution<ad::Index> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(keep));
  return idx;
}

}  // namespace

double marginal_probe(const Matrix& source_features, const Matrix& target_features, const ProbeConfig& cfg) {
  cfg.validate();
  if (source_features.cols() != target_features.cols()) {
    throw DimensionError("marginal_probe: feature widths differ");
  }
  Rng rng(cfg.seed);
  const ad::Index per_side = std::min<ad::Index>(
      {source_features.rows(), target_features.rows(), static_cast<ad::Index>(cfg.max_per_domain)});
  if (per_side < 2) throw ContractError("marginal_probe: each domain needs at least 2 rows");
  const auto src_rows = subsample(source_features.rows(), per_side, rng);
  const auto tgt_rows = subsample(target_features.rows(), per_side, rng);

  const ad::Index n = 2 * per_side;
  const ad::Index dim = source_features.cols();
  Matrix x(n, dim);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (ad::Index i = 0; i < per_side; ++i) {
    x.row(i) = source_features.row(src_rows[static_cast<std::size_t>(i)]);
    y[static_cast<std::size_t>(i)] = kSourceLogit;
    x.row(per_side + i) = target_features.row(tgt_rows[static_cast<std::size_t>(i)]);
    y[static_cast<std::size_t>(per_side + i)] = kTargetLogit;
  }
  std::vector<ad::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<ad::Index>(
      static_cast<ad::Index>(std::floor(cfg.train_fraction * static_cast<double>(n))), 1, n - 1);

  std::vector<ad::Index> train_rows(order.begin(), order.begin() + n_train);
  std::vector<ad::Index> test_rows(order.begin() + n_train, order.end());
  Matrix train_x = gather_rows(x, train_rows);
  Matrix test_x = gather_rows(x, test_rows);
  const Eigen::RowVectorXd mu = train_x.colwise().mean();
  Eigen::RowVectorXd sd = ((train_x.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (ad::Index c = 0; c < dim; ++c) sd(c) = sd(c) > 1e-12 ? sd(c) : 1.0;
  train_x = (train_x.rowwise() - mu).array().rowwise() / sd.array();
  test_x = (test_x.rowwise() - mu).array().rowwise() / sd.array();

  std::vector<int> widths = {static_cast<int>(dim)};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(2);
  Mlp probe(widths, false, rng);
  const std::vector<ad::Parameter*> params = probe.parameters();
  const ad::AdamConfig adam{cfg.lr};
  std::uniform_int_distribution<ad::Index> pick(0, n_train - 1);
  const auto batch = static_cast<std::size_t>(std::min<ad::Index>(cfg.batch_size, n_train));
  std::vector<ad::Index> rows(batch);
  std::vector<int> labels(batch);
  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      rows[b] = pick(rng);
      labels[b] = y[static_cast<std::size_t>(train_rows[static_cast<std::size_t>(rows[b])])];
    }
    ad::Tape tape;
    const ad::Tensor logits = probe.forward(tape, tape.constant(gather_rows(train_x, rows)), Grad::track);
    const ad::Tensor loss = ad::scale(ad::pick_mean(ad::log_softmax(logits), labels), -1.0);
    tape.backward(loss);
    ad::adam_step(params, adam);
  }

  const Matrix logits = probe.evaluate(test_x);
  std::size_t hits = 0;
  for (ad::Index r = 0; r < logits.rows(); ++r) {
    const int guess = logits(r, 1) > logits(r, 0) ? 1 : 0;
    hits += guess == y[static_cast<std::size_t>(test_rows[static_cast<std::size_t>(r)])] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

double marginal_probe(const ModelBundle& bundle, const DomainDataset& source, const DomainDataset& target,
                      const ProbeConfig& cfg) {
  return marginal_probe(features(bundle, source.features), features(bundle, target.features), cfg);
}

ConditionalProbeResult conditional_probe(const Matrix& source_features, std::span<const int> source_labels,
                                         const Matrix& target_features, std::span<const int> target_labels,
                                         int num_classes, const ProbeConfig& cfg) {
  ConditionalProbeResult out;
  out.per_class.resize(static_cast<std::size_t>(num_classes));
  double total = 0.0;
  int available = 0;
  for (int k = 0; k < num_classes; ++k) {
    std::vector<ad::Index> src, tgt;
    for (std::size_t i = 0; i < source_labels.size(); ++i) {
      if (source_labels[i] == k) src.push_back(static_cast<ad::Index>(i));
    }
    for (std::size_t i = 0; i < target_labels.size(); ++i) {
      if (target_labels[i] == k) tgt.push_back(static_cast<ad::Index>(i));
    }
    if (src.size() < 2 || tgt.size() < 2) continue;
    const double acc = marginal_probe(gather_rows(source_features, src), gather_rows(target_features, tgt), cfg);
    out.per_class[static_cast<std::size_t>(k)] = acc;
    total += acc;
    ++available;
  }
  if (available > 0) out.mean = total / available;
  return out;
}

ConditionalProbeResult conditional_probe(const ModelBundle& bundle, const DomainDataset& source,
                                         const DomainDataset& target_labeled, const ProbeConfig& cfg) {
  return conditional_probe(features(bundle, source.features), source.labels,
                           features(bundle, target_labeled.features), target_labeled.labels,
                           bundle.num_classes(), cfg);
}

// ---- exports --------------------------------------------------------------

void export_embeddings(const ModelBundle& bundle, std::span<const DomainDataset* const> datasets,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  bool header = false;
  for (const DomainDataset* ds : datasets) {
    const Matrix z = features(bundle, ds->features);
    const auto pred = predict(bundle, ds->features);
    if (!header) {
      for (ad::Index c = 0; c < ds->dim(); ++c) out << 'x' << c << ',';
      for (ad::Index c = 0; c < z.cols(); ++c) out << 'z' << c << ',';
      out << "predicted,label,domain\n";
      header = true;
    }
    for (ad::Index i = 0; i < ds->size(); ++i) {
      for (ad::Index c = 0; c < ds->dim(); ++c) out << fmt::format("{:.17g},", ds->features(i, c));
      for (ad::Index c = 0; c < z.cols(); ++c) out << fmt::format("{:.17g},", z(i, c));
      out << pred[static_cast<std::size_t>(i)] << ',' << ds->labels[static_cast<std::size_t>(i)] << ','
          << to_string(ds->domain) << '\n';
    }
  }
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

std::vector<EmbeddingRow> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw IoError(fmt::format("'{}' is empty", path.string()));
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto n_inputs = std::count_if(header.begin(), header.end(), [](const std::string& h) { return h[0] == 'x'; });
  const auto n_feats = std::count_if(header.begin(), header.end(), [](const std::string& h) { return h[0] == 'z'; });
  std::vector<EmbeddingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) throw IoError(fmt::format("'{}': ragged row", path.string()));
    EmbeddingRow row;
    row.input.resize(n_inputs);
    row.features.resize(n_feats);
    std::size_t c = 0;
    for (ad::Index i = 0; i < n_inputs; ++i) row.input(i) = detail::parse_double(cells[c++]);
    for (ad::Index i = 0; i < n_feats; ++i) row.features(i) = detail::parse_double(cells[c++]);
    row.predicted = detail::parse_int(cells[c++]);
    row.label = detail::parse_int(cells[c++]);
    row.domain = parse_domain(cells[c]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<GridPoint> decision_grid(const ModelBundle& bundle, const GridBounds& bounds, int resolution) {
  if (resolution < 2) throw ConfigError(fmt::format("decision_grid: resolution must be >= 2, got {}", resolution));
  for (double v : {bounds.x0_min, bounds.x0_max, bounds.x1_min, bounds.x1_max}) {
    if (!std::isfinite(v)) throw ConfigError("decision_grid: bounds must be finite");
  }
  if (!(bounds.x0_max > bounds.x0_min) || !(bounds.x1_max > bounds.x1_min)) {
    throw ConfigError("decision_grid: bounds must have max > min");
  }
  if (bundle.spec.input_dim != 2) throw ConfigError("decision_grid: requires 2D inputs");
  const ad::Index n = static_cast<ad::Index>(resolution) * resolution;
  Matrix x(n, 2);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      const ad::Index r = static_cast<ad::Index>(i) * resolution + j;
      x(r, 0) = bounds.x0_min + (bounds.x0_max - bounds.x0_min) * i / (resolution - 1);
      x(r, 1) = bounds.x1_min + (bounds.x1_max - bounds.x1_min) * j / (resolution - 1);
    }
  }
  const Matrix proba = predict_proba(bundle, x);
  const auto pred = predict(bundle, x);
  std::vector<GridPoint> grid(static_cast<std::size_t>(n));
  for (ad::Index r = 0; r < n; ++r) {
    grid[static_cast<std::size_t>(r)] = {x(r, 0), x(r, 1), pred[static_cast<std::size_t>(r)], proba.row(r).maxCoeff()};
  }
  return grid;
}

void write_grid_csv(std::span<const GridPoint> grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << "x0,x1,predicted_class,max_prob\n";
  for (const auto& p : grid) {
    out << fmt::format("{:.17g},{:.17g},{},{:.17g}\n", p.x0, p.x1, p.predicted, p.max_prob);
  }
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

}  // namespace dirl
