#include "dirl/dataset.hpp"

#include <fmt/format.h>

#include <bit>
#include <fstream>
#include <sstream>

#include "dirl/error.hpp"
#include "parse_util.hpp"

namespace dirl {

std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(std::string_view s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError(fmt::format("unknown domain '{}'", s));
}

bool DomainDataset::fully_labeled() const {
  for (int y : labels) {
    if (y == kUnlabeled) return false;
  }
  return true;
}

LabeledExample DomainDataset::example(ad::Index i) const {
  LabeledExample ex;
  ex.features = features.row(i).transpose();
  if (is_labeled(i)) ex.class_label = labels[static_cast<std::size_t>(i)];
  ex.domain = domain;
  return ex;
}

std::vector<ad::Index> DomainDataset::indices_of_class(int k) const {
  std::vector<ad::Index> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == k) out.push_back(static_cast<ad::Index>(i));
  }
  return out;
}

std::vector<ad::Index> DomainDataset::labeled_indices() const {
  std::vector<ad::Index> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kUnlabeled) out.push_back(static_cast<ad::Index>(i));
  }
  return out;
}

std::vector<ad::Index> DomainDataset::unlabeled_indices() const {
  std::vector<ad::Index> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kUnlabeled) out.push_back(static_cast<ad::Index>(i));
  }
  return out;
}

std::vector<ad::Index> DomainDataset::class_counts() const {
  std::vector<ad::Index> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y != kUnlabeled) counts[static_cast<std::size_t>(y)] += 1;
  }
  return counts;
}

void DomainDataset::validate() const {
  if (features.rows() == 0) throw ContractError(fmt::format("dataset '{}' is empty", name));
  if (static_cast<ad::Index>(labels.size()) != features.rows()) {
    throw ContractError(fmt::format("dataset '{}': {} labels for {} rows", name, labels.size(),
                                    features.rows()));
  }
  if (num_classes <= 0) throw ContractError(fmt::format("dataset '{}': num_classes must be positive", name));
  for (int y : labels) {
    if (y != kUnlabeled && (y < 0 || y >= num_classes)) {
      throw ContractError(fmt::format("dataset '{}': label {} outside [0, {})", name, y, num_classes));
    }
  }
}

Matrix gather_rows(const Matrix& features, std::span<const ad::Index> rows) {
  Matrix out(static_cast<ad::Index>(rows.size()), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<ad::Index>(i)) = features.row(rows[i]);
  return out;
}

void write_dataset_csv(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  for (ad::Index c = 0; c < ds.dim(); ++c) out << 'x' << c << ',';
  out << "label,domain,is_labeled\n";
  for (ad::Index i = 0; i < ds.size(); ++i) {
    for (ad::Index c = 0; c < ds.dim(); ++c) out << fmt::format("{:.17g},", ds.features(i, c));
    out << ds.labels[static_cast<std::size_t>(i)] << ',' << to_string(ds.domain) << ','
        << (ds.is_labeled(i) ? 1 : 0) << '\n';
  }
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

DomainDataset read_dataset_csv(const std::filesystem::path& path, int num_classes, std::string name) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw IoError(fmt::format("'{}' has no header", path.string()));
  const auto header = split_csv(line);
  if (header.size() < 4 || header[header.size() - 3] != "label" ||
      header[header.size() - 2] != "domain" || header.back() != "is_labeled") {
    throw IoError(fmt::format("'{}': unexpected header '{}'", path.string(), line));
  }
  const std::size_t dim = header.size() - 3;
  std::vector<double> values;
  DomainDataset ds;
  ds.num_classes = num_classes;
  ds.name = name.empty() ? path.stem().string() : std::move(name);
  std::size_t row = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw IoError(fmt::format("'{}' row {}: expected {} cells, got {}", path.string(), row + 1,
                                header.size(), cells.size()));
    }
    for (std::size_t c = 0; c < dim; ++c) values.push_back(detail::parse_double(cells[c]));
    const int label = detail::parse_int(cells[dim]);
    const Domain domain = parse_domain(cells[dim + 1]);
    const bool labeled = cells[dim + 2] == "1";
    if (labeled != (label != kUnlabeled)) {
      throw IoError(fmt::format("'{}' row {}: is_labeled disagrees with label", path.string(), row + 1));
    }
    if (first) {
      ds.domain = domain;
      first = false;
    } else if (domain != ds.domain) {
      throw IoError(fmt::format("'{}' row {}: mixed domains", path.string(), row + 1));
    }
    ds.labels.push_back(label);
    ++row;
  }
  ds.features = Eigen::Map<Matrix>(values.data(), static_cast<ad::Index>(row),
                                   static_cast<ad::Index>(dim));
  ds.validate();
  return ds;
}

std::uint64_t dataset_checksum(const DomainDataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      h ^= (word >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(ds.features.rows()));
  mix(static_cast<std::uint64_t>(ds.features.cols()));
  for (ad::Index i = 0; i < ds.features.size(); ++i) mix(std::bit_cast<std::uint64_t>(ds.features.data()[i]));
  for (int y : ds.labels) mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
  mix(ds.domain == Domain::source ? 0U : 1U);
  return h;
}

}  // namespace dirl
