#include "dirl/networks.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dirl/error.hpp"
#include "parse_util.hpp"

namespace dirl {

Mlp::Mlp(std::span<const int> widths, bool activate_output, Rng& rng, double negative_slope)
    : widths_(widths.begin(), widths.end()), activate_output_(activate_output), negative_slope_(negative_slope) {
  if (!(negative_slope >= 0.0 && negative_slope < 1.0)) {
    throw ConfigError(fmt::format("negative_slope must lie in [0, 1), got {}", negative_slope));
  }
  if (widths_.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  for (int w : widths_) {
    if (w <= 0) throw ConfigError(fmt::format("layer widths must be positive, got {}", w));
  }
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    const int fan_in = widths_[i];
    const int fan_out = widths_[i + 1];
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Matrix w(fan_in, fan_out);
    for (ad::Index k = 0; k < w.size(); ++k) w.data()[k] = uniform(rng);
    layers_.push_back({ad::Parameter(std::move(w)), ad::Parameter(Matrix::Zero(1, fan_out))});
  }
}

ad::Tensor Mlp::forward(ad::Tape& tape, const ad::Tensor& x, Grad mode) {
  ad::Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& layer = layers_[i];
    const ad::Tensor w = mode == Grad::track ? tape.track(layer.w) : tape.frozen(layer.w);
    const ad::Tensor b = mode == Grad::track ? tape.track(layer.b) : tape.frozen(layer.b);
    h = ad::linear(h, w, b);
    if (i + 1 < layers_.size() || activate_output_) {
      h = negative_slope_ > 0.0 ? ad::leaky_relu(h, negative_slope_) : ad::relu(h);
    }
  }
  return h;
}

Matrix Mlp::evaluate(const Matrix& x) const {
  if (x.cols() != input_dim()) {
    throw DimensionError(fmt::format("mlp: input {}x{} does not conform to input width {}", x.rows(),
                                     x.cols(), input_dim()));
  }
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Matrix next = h * layers_[i].w.value();
    next.rowwise() += layers_[i].b.value().row(0);
    if (i + 1 < layers_.size() || activate_output_) {
      const double slope = negative_slope_;
      next = next.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    }
    h = std::move(next);
  }
  return h;
}

std::vector<ad::Parameter*> Mlp::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.w);
    out.push_back(&layer.b);
  }
  return out;
}

std::vector<const ad::Parameter*> Mlp::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const auto& layer : layers_) {
    out.push_back(&layer.w);
    out.push_back(&layer.b);
  }
  return out;
}

void NetworkSpec::validate() const {
  if (input_dim <= 0) throw ConfigError("input_dim must be positive");
  if (feature_dim <= 0) throw ConfigError("feature_dim must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  for (int w : extractor_hidden) {
    if (w <= 0) throw ConfigError("extractor_hidden widths must be positive");
  }
  for (int w : head_hidden) {
    if (w <= 0) throw ConfigError("head_hidden widths must be positive");
  }
  if (!(disc_negative_slope >= 0.0 && disc_negative_slope < 1.0)) {
    throw ConfigError(fmt::format("disc_negative_slope must lie in [0, 1), got {}", disc_negative_slope));
  }
}

std::vector<ad::Parameter*> ModelBundle::class_params(int k) {
  if (k < 0 || k >= num_classes()) {
    throw IndexError(fmt::format("class discriminator {} outside [0, {})", k, num_classes()));
  }
  return class_disc[static_cast<std::size_t>(k)].parameters();
}

std::vector<ad::Parameter*> ModelBundle::all_class_params() {
  std::vector<ad::Parameter*> out;
  for (auto& c : class_disc) {
    auto p = c.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

namespace {

template <typename Net, typename Sink>
void name_layers(Net& net, const std::string& prefix, Sink&& sink) {
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    sink(fmt::format("{}.{}.{}", prefix, i / 2, i % 2 == 0 ? 'w' : 'b'), params[i]);
  }
}

template <typename Bundle, typename Sink>
void name_all(Bundle& bundle, Sink&& sink) {
  name_layers(bundle.extractor, "g", sink);
  name_layers(bundle.classifier, "f", sink);
  name_layers(bundle.domain_disc, "D", sink);
  for (std::size_t k = 0; k < bundle.class_disc.size(); ++k) {
    name_layers(bundle.class_disc[k], fmt::format("C{}", k), sink);
  }
}

}  // namespace

std::vector<ad::NamedParameter> ModelBundle::named_parameters() {
  std::vector<ad::NamedParameter> out;
  name_all(*this, [&out](std::string name, ad::Parameter* p) { out.push_back({std::move(name), p}); });
  return out;
}

std::vector<std::pair<std::string, const ad::Parameter*>> ModelBundle::named_parameters() const {
  std::vector<std::pair<std::string, const ad::Parameter*>> out;
  name_all(*this, [&out](std::string name, const ad::Parameter* p) { out.emplace_back(std::move(name), p); });
  return out;
}

ModelBundle init_bundle(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ModelBundle bundle;
  bundle.spec = spec;

  std::vector<int> g_widths = {spec.input_dim};
  g_widths.insert(g_widths.end(), spec.extractor_hidden.begin(), spec.extractor_hidden.end());
  g_widths.push_back(spec.feature_dim);
  bundle.extractor = Mlp(g_widths, spec.relu_features, rng);

  auto head = [&](int out, double slope) {
    std::vector<int> widths = {spec.feature_dim};
    widths.insert(widths.end(), spec.head_hidden.begin(), spec.head_hidden.end());
    widths.push_back(out);
    return Mlp(widths, false, rng, slope);
  };
  bundle.classifier = head(spec.num_classes, 0.0);
  bundle.domain_disc = head(2, spec.disc_negative_slope);
  for (int k = 0; k < spec.num_classes; ++k) bundle.class_disc.push_back(head(2, spec.disc_negative_slope));
  return bundle;
}

ad::Tensor features(ModelBundle& bundle, ad::Tape& tape, const ad::Tensor& x, Grad mode) {
  return bundle.extractor.forward(tape, x, mode);
}

ad::Tensor classify(ModelBundle& bundle, ad::Tape& tape, const ad::Tensor& z, Grad mode) {
  return bundle.classifier.forward(tape, z, mode);
}

ad::Tensor discriminate_domain(ModelBundle& bundle, ad::Tape& tape, const ad::Tensor& z, Grad mode) {
  return bundle.domain_disc.forward(tape, z, mode);
}

ad::Tensor discriminate_class(ModelBundle& bundle, int k, ad::Tape& tape, const ad::Tensor& z,
                              Grad mode) {
  if (k < 0 || k >= bundle.num_classes()) {
    throw IndexError(fmt::format("class discriminator {} outside [0, {})", k, bundle.num_classes()));
  }
  return bundle.class_disc[static_cast<std::size_t>(k)].forward(tape, z, mode);
}

Matrix features(const ModelBundle& bundle, const Matrix& x) { return bundle.extractor.evaluate(x); }
Matrix classify(const ModelBundle& bundle, const Matrix& z) { return bundle.classifier.evaluate(z); }
Matrix discriminate_domain(const ModelBundle& bundle, const Matrix& z) {
  return bundle.domain_disc.evaluate(z);
}
Matrix discriminate_class(const ModelBundle& bundle, int k, const Matrix& z) {
  if (k < 0 || k >= bundle.num_classes()) {
    throw IndexError(fmt::format("class discriminator {} outside [0, {})", k, bundle.num_classes()));
  }
  return bundle.class_disc[static_cast<std::size_t>(k)].evaluate(z);
}

std::vector<int> predict(const ModelBundle& bundle, const Matrix& x) {
  const Matrix logits = classify(bundle, features(bundle, x));
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (ad::Index r = 0; r < logits.rows(); ++r) {
    int best = 0;
    for (ad::Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

Matrix predict_proba(const ModelBundle& bundle, const Matrix& x) {
  return ad::softmax_rows(classify(bundle, features(bundle, x)));
}

// ---- checkpoints ----------------------------------------------------------

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out.empty() ? "-" : out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  if (s == "-") return out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stoi(cell));
  return out;
}

constexpr const char* kCheckpointMagic = "dirl-checkpoint v1";

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  const NetworkSpec& s = bundle.spec;
  out << kCheckpointMagic << '\n';
  out << fmt::format("spec {} {} {} {} {} {} {:.17g}\n", s.input_dim, s.feature_dim, s.num_classes,
                     join_ints(s.extractor_hidden), join_ints(s.head_hidden), s.relu_features ? 1 : 0,
                     s.disc_negative_slope);
  for (const auto& [name, p] : bundle.named_parameters()) {
    const Matrix& v = p->value();
    out << fmt::format("tensor {} {} {}\n", name, v.rows(), v.cols());
    for (ad::Index r = 0; r < v.rows(); ++r) {
      for (ad::Index c = 0; c < v.cols(); ++c) out << (c ? "," : "") << fmt::format("{:.17g}", v(r, c));
      out << '\n';
    }
  }
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw IoError(fmt::format("'{}' is not a checkpoint", path.string()));
  }
  NetworkSpec spec;
  {
    std::getline(in, line);
    std::istringstream ss(line);
    std::string tag, g_hidden, h_hidden, slope;
    int relu = 0;
    ss >> tag >> spec.input_dim >> spec.feature_dim >> spec.num_classes >> g_hidden >> h_hidden >> relu >> slope;
    if (tag != "spec" || !ss) throw IoError(fmt::format("'{}': malformed spec line", path.string()));
    spec.extractor_hidden = split_ints(g_hidden);
    spec.head_hidden = split_ints(h_hidden);
    spec.relu_features = relu != 0;
    spec.disc_negative_slope = detail::parse_double(slope);
  }
  ModelBundle bundle = init_bundle(spec, 0);
  for (auto& np : bundle.named_parameters()) {
    if (!std::getline(in, line)) throw IoError(fmt::format("'{}': missing tensor {}", path.string(), np.name));
    std::istringstream header(line);
    std::string tag, name;
    ad::Index rows = 0, cols = 0;
    header >> tag >> name >> rows >> cols;
    if (tag != "tensor" || name != np.name || rows != np.param->rows() || cols != np.param->cols()) {
      throw IoError(fmt::format("'{}': expected tensor {} {}x{}, found '{}'", path.string(), np.name,
                                np.param->rows(), np.param->cols(), line));
    }
    Matrix v(rows, cols);
    for (ad::Index r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) throw IoError(fmt::format("'{}': truncated tensor {}", path.string(), name));
      std::stringstream ss(line);
      std::string cell;
      for (ad::Index c = 0; c < cols; ++c) {
        if (!std::getline(ss, cell, ',')) {
          throw IoError(fmt::format("'{}': short row in tensor {}", path.string(), name));
        }
        v(r, c) = detail::parse_double(cell);
      }
    }
    np.param->assign(v);
  }
  return bundle;
}

bool parameters_equal(const ModelBundle& a, const ModelBundle& b) {
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Matrix& x = pa[i].second->value();
    const Matrix& y = pb[i].second->value();
    if (pa[i].first != pb[i].first || x.rows() != y.rows() || x.cols() != y.cols()) return false;
    for (ad::Index k = 0; k < x.size(); ++k) {
      if (std::bit_cast<std::uint64_t>(x.data()[k]) != std::bit_cast<std::uint64_t>(y.data()[k])) return false;
    }
  }
  return true;
}

}  // namespace dirl
