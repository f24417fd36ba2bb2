#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every forward operation in execution order, so node ids are
// already a topological order. Parameters live outside the tape; a tape leaf
// created with Tape::track() adds its adjoint into the parameter's gradient
// when backward() runs, while Tape::frozen() leaves behave as constants.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dirl::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tape;

/// Trainable matrix together with its gradient and Adam moment estimates.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Matrix init);

  Index rows() const { return value_.rows(); }
  Index cols() const { return value_.cols(); }

  const Matrix& value() const { return value_; }
  const Matrix& grad() const { return grad_; }
  const Matrix& adam_m() const { return adam_m_; }
  const Matrix& adam_v() const { return adam_v_; }
  std::int64_t step_count() const { return step_count_; }

  /// Replaces the values, keeping the shape. Throws DimensionError otherwise.
  void assign(const Matrix& value);
  /// Mutable access for finite-difference probing; the shape must not change.
  Matrix& mutable_value() { return value_; }
  void accumulate_grad(const Matrix& g);
  void zero_grad() { grad_.setZero(); }

 private:
  friend struct AdamAccess;

  Matrix value_;
  Matrix grad_;
  Matrix adam_m_;
  Matrix adam_v_;
  std::int64_t step_count_ = 0;
};

/// Lightweight handle to a node on a Tape.
class Tensor {
 public:
  Tensor() = default;

  Index rows() const;
  Index cols() const;
  const Matrix& value() const;
  /// Adjoint computed by the most recent backward() on the owning tape.
  const Matrix& grad() const;
  /// Value of a 1x1 tensor.
  double item() const;
  int node_id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Propagates the node's adjoint into its inputs via Tape::accumulate().
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  /// Leaf whose adjoint is added to `param.grad()` by backward().
  Tensor track(Parameter& param);
  /// Leaf holding a copy of the parameter value; receives no gradient.
  Tensor frozen(const Parameter& param);

  /// Records an operation output. Inputs must already be on this tape.
  /// Throws NonFiniteError if `value` contains NaN or Inf.
  Tensor record(Matrix value, std::vector<int> inputs, BackwardFn backward,
                const char* op_name);

  /// Computes adjoints of `loss` (1x1) for every node and adds them into the
  /// gradients of tracked parameters. Parameter gradients accumulate across
  /// calls until they are explicitly zeroed.
  void backward(const Tensor& loss);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  /// Adds `contribution` to the adjoint of node `id` (no-op for constants).
  void accumulate(int id, const Matrix& contribution);
  bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  std::size_t size() const { return nodes_.size(); }
  void check_owned(const Tensor& t, const char* op_name) const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  int push(Node node);

  std::vector<Node> nodes_;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise (Hadamard) product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
/// x[B x O] + b[1 x O], b broadcast over rows.
Tensor add_row_vector(const Tensor& x, const Tensor& b);
/// x[B x M] + v[B x 1], v broadcast over columns.
Tensor add_col_vector(const Tensor& x, const Tensor& v);

/// Dense layer x*w + b. Throws DimensionError naming both shapes.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, Parameter& w, Parameter& b);

/// max(0, x); the subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x);
/// max(x, 0) + slope * min(x, 0); slope 0 is relu.
Tensor leaky_relu(const Tensor& x, double negative_slope);
Tensor exp(const Tensor& x);
/// Rowwise log-softmax with max subtraction. Requires at least 2 columns.
Tensor log_softmax(const Tensor& x);
/// Rowwise division by the Euclidean norm. Rows with norm < 1e-12 raise
/// DegenerateFeatureError.
Tensor l2_normalize(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [B x M] -> [B x 1].
Tensor row_sum(const Tensor& x);
/// Mean over rows of x(i, labels[i]).
Tensor pick_mean(const Tensor& x, std::span<const int> labels);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, Index begin, Index count);

/// Tape-free rowwise log-softmax and softmax.
Matrix log_softmax_rows(const Matrix& x);
Matrix softmax_rows(const Matrix& x);

// ---- optimization ---------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update per parameter, then zeroes the gradients.
/// Throws ConfigError when lr <= 0.
void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg);

// ---- gradient checking ----------------------------------------------------

struct NamedParameter {
  std::string name;
  Parameter* param;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double max_rel_error() const;
  bool passed() const { return max_rel_error() < tolerance; }
};

/// Builds a loss on a fresh tape.
using Fragment = std::function<Tensor(Tape&)>;

/// Compares backprop gradients of `fragment` with central finite differences
/// of step `eps` for every entry of every listed parameter. The relative error
/// of one entry is |a - n| / max(|a|, |n|, 1e-7). Parameter values are restored
/// and gradients left zeroed on return.
GradCheckReport grad_check(const Fragment& fragment, std::span<const NamedParameter> params,
                           double tolerance, double eps = 1e-4);

}  // namespace dirl::ad
