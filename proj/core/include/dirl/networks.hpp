#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dirl/autodiff.hpp"
#include "dirl/dataset.hpp"

namespace dirl {

/// Whether a forward pass records gradients into the network's parameters.
enum class Grad { track, frozen };

/// Fully connected network. Hidden layers use ReLU (leaky when
/// `negative_slope` > 0); the output layer is linear unless `activate_output`
/// is set.
class Mlp {
 public:
  Mlp() = default;
  /// `widths` lists every layer size including input and output.
  Mlp(std::span<const int> widths, bool activate_output, Rng& rng, double negative_slope = 0.0);

  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x, Grad mode);
  /// Tape-free evaluation; safe to call concurrently.
  Matrix evaluate(const Matrix& x) const;

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  bool activate_output() const { return activate_output_; }
  double negative_slope() const { return negative_slope_; }

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  struct Layer {
    ad::Parameter w;
    ad::Parameter b;
  };

  std::vector<int> widths_;
  std::vector<Layer> layers_;
  bool activate_output_ = false;
  double negative_slope_ = 0.0;
};

struct NetworkSpec {
  int input_dim = 2;
  int feature_dim = 7;
  int num_classes = 2;
  /// Hidden widths of the feature extractor before its feature layer.
  std::vector<int> extractor_hidden = {7, 7};
  /// Hidden widths shared by the classifier and every discriminator.
  std::vector<int> head_hidden = {7, 7, 7};
  /// Apply ReLU to the feature layer. Off by default so normalized features
  /// cannot collapse to a zero row.
  bool relu_features = false;
  /// Negative slope of the hidden activations of D and every C_k. Plain ReLU
  /// discriminators this narrow tend to go flat over the target features,
  /// which stops the generator gradient.
  double disc_negative_slope = 0.2;

  void validate() const;
};

/// Feature extractor g, classifier f, domain discriminator, and one class
/// discriminator per class. Discriminators emit two logits: index 0 is
/// "source", index 1 is "target".
struct ModelBundle {
  NetworkSpec spec;
  Mlp extractor;
  Mlp classifier;
  Mlp domain_disc;
  std::vector<Mlp> class_disc;

  int num_classes() const { return spec.num_classes; }

  std::vector<ad::Parameter*> extractor_params() { return extractor.parameters(); }
  std::vector<ad::Parameter*> classifier_params() { return classifier.parameters(); }
  std::vector<ad::Parameter*> domain_params() { return domain_disc.parameters(); }
  std::vector<ad::Parameter*> class_params(int k);
  std::vector<ad::Parameter*> all_class_params();

  /// Stable names such as "g.0.w", "f.2.b", "D.1.w", "C1.3.b".
  std::vector<ad::NamedParameter> named_parameters();
  std::vector<std::pair<std::string, const ad::Parameter*>> named_parameters() const;
};

inline constexpr int kSourceLogit = 0;
inline constexpr int kTargetLogit = 1;

/// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)) and zero biases.
ModelBundle init_bundle(const NetworkSpec& spec, std::uint64_t seed);

ad::Tensor features(ModelBundle& bundle, ad::Tape& tape, const ad::Tensor& x, Grad mode);
ad::Tensor classify(ModelBundle& bundle, ad::Tape& tape, const ad::Tensor& z, Grad mode);
ad::Tensor discriminate_domain(ModelBundle& bundle, ad::Tape& tape, const ad::Tensor& z, Grad mode);
/// Throws IndexError when k is outside [0, K).
ad::Tensor discriminate_class(ModelBundle& bundle, int k, ad::Tape& tape, const ad::Tensor& z,
                              Grad mode);

Matrix features(const ModelBundle& bundle, const Matrix& x);
Matrix classify(const ModelBundle& bundle, const Matrix& z);
Matrix discriminate_domain(const ModelBundle& bundle, const Matrix& z);
Matrix discriminate_class(const ModelBundle& bundle, int k, const Matrix& z);

/// argmax of f(g(x)) per row; ties go to the lowest class index.
std::vector<int> predict(const ModelBundle& bundle, const Matrix& x);
/// Rowwise softmax of f(g(x)).
Matrix predict_proba(const ModelBundle& bundle, const Matrix& x);

/// Text checkpoint: a spec line followed by named tensors with shape headers.
/// Values are written with 17 significant digits, so loading is bitwise exact.
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

/// True when every parameter of both bundles is bitwise identical.
bool parameters_equal(const ModelBundle& a, const ModelBundle& b);

}  // namespace dirl
