#include "dirl/autodiff.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "dirl/error.hpp"

namespace dirl::ad {

namespace {

std::string shape_str(const Matrix& m) { return fmt::format("{}x{}", m.rows(), m.cols()); }

Tape& owner(const Tensor& t, const char* op_name) {
  if (!t.valid()) throw ContractError(fmt::format("{}: tensor is not attached to a tape", op_name));
  return *t.tape();
}

Tape& common_tape(const Tensor& a, const Tensor& b, const char* op_name) {
  Tape& tape = owner(a, op_name);
  if (b.tape() != &tape) throw ContractError(fmt::format("{}: operands live on different tapes", op_name));
  return tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op_name) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op_name, shape_str(a.value()),
                                     shape_str(b.value())));
  }
}

}  // namespace

// ---- Parameter ------------------------------------------------------------

Parameter::Parameter(Matrix init)
    : value_(std::move(init)),
      grad_(Matrix::Zero(value_.rows(), value_.cols())),
      adam_m_(Matrix::Zero(value_.rows(), value_.cols())),
      adam_v_(Matrix::Zero(value_.rows(), value_.cols())) {}

void Parameter::assign(const Matrix& value) {
  if (value.rows() != rows() || value.cols() != cols()) {
    throw DimensionError(
        fmt::format("parameter assign: shape mismatch {} vs {}", shape_str(value_), shape_str(value)));
  }
  value_ = value;
}

void Parameter::accumulate_grad(const Matrix& g) {
  if (g.rows() != rows() || g.cols() != cols()) {
    throw DimensionError(
        fmt::format("parameter gradient: shape mismatch {} vs {}", shape_str(value_), shape_str(g)));
  }
  grad_ += g;
}

// ---- Tensor ---------------------------------------------------------------

Index Tensor::rows() const { return value().rows(); }
Index Tensor::cols() const { return value().cols(); }
const Matrix& Tensor::value() const { return tape_->value(id_); }
const Matrix& Tensor::grad() const { return tape_->grad(id_); }

double Tensor::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError(fmt::format("item: tensor is {} not 1x1", shape_str(v)));
  }
  return v(0, 0);
}

// ---- Tape -----------------------------------------------------------------

int Tape::push(Node node) {
  node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NonFiniteError("constant: input contains NaN or Inf");
  Node node;
  node.value = std::move(value);
  return Tensor(this, push(std::move(node)));
}

Tensor Tape::track(Parameter& param) {
  Node node;
  node.value = param.value();
  node.param = &param;
  node.requires_grad = true;
  return Tensor(this, push(std::move(node)));
}

Tensor Tape::frozen(const Parameter& param) {
  Node node;
  node.value = param.value();
  return Tensor(this, push(std::move(node)));
}

Tensor Tape::record(Matrix value, std::vector<int> inputs, BackwardFn backward, const char* op_name) {
  if (!value.allFinite()) {
    throw NonFiniteError(fmt::format("{}: produced a non-finite value", op_name));
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](int id) { return requires_grad(id); });
  if (node.requires_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  return Tensor(this, push(std::move(node)));
}

void Tape::check_owned(const Tensor& t, const char* op_name) const {
  if (t.tape() != this) throw ContractError(fmt::format("{}: tensor belongs to another tape", op_name));
}

void Tape::accumulate(int id, const Matrix& contribution) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.requires_grad) return;
  node.grad += contribution;
}

void Tape::backward(const Tensor& loss) {
  check_owned(loss, "backward");
  const Matrix& v = loss.value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError(fmt::format("backward: loss must be 1x1, got {}", shape_str(v)));
  }
  const int last = loss.node_id();
  for (int id = 0; id <= last; ++id) nodes_[static_cast<std::size_t>(id)].grad.setZero();
  nodes_[static_cast<std::size_t>(last)].grad(0, 0) = 1.0;
  for (int id = last; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) continue;
    if (node.backward) node.backward(*this, id);
    if (node.param != nullptr) node.param->accumulate_grad(node.grad);
  }
}

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError(fmt::format("matmul: shape mismatch {} vs {}", shape_str(a.value()),
                                     shape_str(b.value())));
  }
  const int ia = a.node_id();
  const int ib = b.node_id();
  return tape.record(a.value() * b.value(), {ia, ib},
                     [ia, ib](Tape& t, int self) {
                       const Matrix& g = t.grad(self);
                       if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                       if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                     },
                     "matmul");
}

Tensor transpose(const Tensor& a) {
  Tape& tape = owner(a, "transpose");
  const int ia = a.node_id();
  return tape.record(a.value().transpose(), {ia},
                     [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self).transpose()); },
                     "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "add");
  require_same_shape(a, b, "add");
  const int ia = a.node_id();
  const int ib = b.node_id();
  return tape.record(a.value() + b.value(), {ia, ib},
                     [ia, ib](Tape& t, int self) {
                       t.accumulate(ia, t.grad(self));
                       t.accumulate(ib, t.grad(self));
                     },
                     "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  const int ia = a.node_id();
  const int ib = b.node_id();
  return tape.record(a.value() - b.value(), {ia, ib},
                     [ia, ib](Tape& t, int self) {
                       t.accumulate(ia, t.grad(self));
                       if (t.requires_grad(ib)) t.accumulate(ib, -t.grad(self));
                     },
                     "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  const int ia = a.node_id();
  const int ib = b.node_id();
  return tape.record(a.value().cwiseProduct(b.value()), {ia, ib},
                     [ia, ib](Tape& t, int self) {
                       const Matrix& g = t.grad(self);
                       if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                       if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                     },
                     "mul");
}

Tensor scale(const Tensor& a, double factor) {
  Tape& tape = owner(a, "scale");
  const int ia = a.node_id();
  return tape.record(a.value() * factor, {ia},
                     [ia, factor](Tape& t, int self) { t.accumulate(ia, t.grad(self) * factor); },
                     "scale");
}

Tensor add_scalar(const Tensor& a, double offset) {
  Tape& tape = owner(a, "add_scalar");
  const int ia = a.node_id();
  Matrix out = a.value().array() + offset;
  return tape.record(std::move(out), {ia},
                     [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self)); }, "add_scalar");
}

Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  Tape& tape = common_tape(x, b, "add_row_vector");
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw DimensionError(fmt::format("add_row_vector: shape mismatch {} vs {}",
                                     shape_str(x.value()), shape_str(b.value())));
  }
  const int ix = x.node_id();
  const int ib = b.node_id();
  Matrix out = x.value().rowwise() + b.value().row(0);
  return tape.record(std::move(out), {ix, ib},
                     [ix, ib](Tape& t, int self) {
                       t.accumulate(ix, t.grad(self));
                       if (t.requires_grad(ib)) t.accumulate(ib, t.grad(self).colwise().sum());
                     },
                     "add_row_vector");
}

Tensor add_col_vector(const Tensor& x, const Tensor& v) {
  Tape& tape = common_tape(x, v, "add_col_vector");
  if (v.cols() != 1 || v.rows() != x.rows()) {
    throw DimensionError(fmt::format("add_col_vector: shape mismatch {} vs {}",
                                     shape_str(x.value()), shape_str(v.value())));
  }
  const int ix = x.node_id();
  const int iv = v.node_id();
  Matrix out = x.value().colwise() + v.value().col(0);
  return tape.record(std::move(out), {ix, iv},
                     [ix, iv](Tape& t, int self) {
                       t.accumulate(ix, t.grad(self));
                       if (t.requires_grad(iv)) t.accumulate(iv, t.grad(self).rowwise().sum());
                     },
                     "add_col_vector");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape& tape = common_tape(x, w, "linear");
  tape.check_owned(b, "linear");
  if (x.cols() != w.rows()) {
    throw DimensionError(fmt::format("linear: input {} does not conform to weight {}",
                                     shape_str(x.value()), shape_str(w.value())));
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError(fmt::format("linear: bias {} does not conform to weight {}",
                                     shape_str(b.value()), shape_str(w.value())));
  }
  const int ix = x.node_id();
  const int iw = w.node_id();
  const int ib = b.node_id();
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return tape.record(std::move(out), {ix, iw, ib},
                     [ix, iw, ib](Tape& t, int self) {
                       const Matrix& g = t.grad(self);
                       if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw).transpose());
                       if (t.requires_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * g);
                       if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                     },
                     "linear");
}

Tensor linear(const Tensor& x, Parameter& w, Parameter& b) {
  Tape& tape = owner(x, "linear");
  return linear(x, tape.track(w), tape.track(b));
}

Tensor relu(const Tensor& x) {
  Tape& tape = owner(x, "relu");
  if (!x.value().allFinite()) throw NonFiniteError("relu: non-finite input");
  const int ix = x.node_id();
  return tape.record(x.value().cwiseMax(0.0), {ix},
                     [ix](Tape& t, int self) {
                       Matrix mask = (t.value(ix).array() > 0.0).cast<double>();
                       t.accumulate(ix, t.grad(self).cwiseProduct(mask));
                     },
                     "relu");
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  Tape& tape = owner(x, "leaky_relu");
  if (!x.value().allFinite()) throw NonFiniteError("leaky_relu: non-finite input");
  const int ix = x.node_id();
  Matrix out = x.value().unaryExpr([negative_slope](double v) { return v > 0.0 ? v : negative_slope * v; });
  return tape.record(std::move(out), {ix},
                     [ix, negative_slope](Tape& t, int self) {
                       Matrix slope = t.value(ix).unaryExpr(
                           [negative_slope](double v) { return v > 0.0 ? 1.0 : negative_slope; });
                       t.accumulate(ix, t.grad(self).cwiseProduct(slope));
                     },
                     "leaky_relu");
}

Tensor exp(const Tensor& x) {
  Tape& tape = owner(x, "exp");
  const int ix = x.node_id();
  return tape.record(x.value().array().exp().matrix(), {ix},
                     [ix](Tape& t, int self) {
                       t.accumulate(ix, t.grad(self).cwiseProduct(t.value(self)));
                     },
                     "exp");
}

Matrix log_softmax_rows(const Matrix& in) {
  if (in.cols() < 2) {
    throw ConfigError(fmt::format("log_softmax: needs at least 2 columns, got {}", in.cols()));
  }
  Matrix out(in.rows(), in.cols());
  for (Index r = 0; r < in.rows(); ++r) {
    const double m = in.row(r).maxCoeff();
    const double lse = m + std::log((in.row(r).array() - m).exp().sum());
    out.row(r) = in.row(r).array() - lse;
  }
  return out;
}

Matrix softmax_rows(const Matrix& x) { return log_softmax_rows(x).array().exp(); }

Tensor log_softmax(const Tensor& x) {
  Tape& tape = owner(x, "log_softmax");
  Matrix out = log_softmax_rows(x.value());
  const int ix = x.node_id();
  return tape.record(std::move(out), {ix},
                     [ix](Tape& t, int self) {
                       // dx = g - softmax * rowsum(g)
                       const Matrix& g = t.grad(self);
                       Matrix p = t.value(self).array().exp();
                       Matrix dx = g - (p.array().colwise() * g.rowwise().sum().array()).matrix();
                       t.accumulate(ix, dx);
                     },
                     "log_softmax");
}

Tensor l2_normalize(const Tensor& x) {
  Tape& tape = owner(x, "l2_normalize");
  const Matrix& in = x.value();
  Eigen::VectorXd norms = in.rowwise().norm();
  for (Index r = 0; r < in.rows(); ++r) {
    if (!(norms(r) >= 1e-12)) {
      throw DegenerateFeatureError(
          fmt::format("l2_normalize: row {} has norm {:.3e} below 1e-12", r, norms(r)));
    }
  }
  Matrix out = in.array().colwise() / norms.array();
  const int ix = x.node_id();
  return tape.record(std::move(out), {ix},
                     [ix, norms](Tape& t, int self) {
                       // dx = (g - y * <g, y>) / ||x|| per row
                       const Matrix& g = t.grad(self);
                       const Matrix& y = t.value(self);
                       Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
                       Matrix dx = g - (y.array().colwise() * dots.array()).matrix();
                       dx.array().colwise() /= norms.array();
                       t.accumulate(ix, dx);
                     },
                     "l2_normalize");
}

Tensor sum(const Tensor& x) {
  Tape& tape = owner(x, "sum");
  const int ix = x.node_id();
  const Index r = x.rows();
  const Index c = x.cols();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return tape.record(std::move(out), {ix},
                     [ix, r, c](Tape& t, int self) {
                       t.accumulate(ix, Matrix::Constant(r, c, t.grad(self)(0, 0)));
                     },
                     "sum");
}

Tensor mean(const Tensor& x) {
  const auto n = static_cast<double>(x.rows() * x.cols());
  if (n == 0) throw ContractError("mean: empty tensor");
  return scale(sum(x), 1.0 / n);
}

Tensor row_sum(const Tensor& x) {
  Tape& tape = owner(x, "row_sum");
  const int ix = x.node_id();
  const Index c = x.cols();
  Matrix out = x.value().rowwise().sum();
  return tape.record(std::move(out), {ix},
                     [ix, c](Tape& t, int self) {
                       t.accumulate(ix, t.grad(self).replicate(1, c));
                     },
                     "row_sum");
}

Tensor pick_mean(const Tensor& x, std::span<const int> labels) {
  Tape& tape = owner(x, "pick_mean");
  if (static_cast<Index>(labels.size()) != x.rows()) {
    throw DimensionError(fmt::format("pick_mean: {} labels for {} rows", labels.size(), x.rows()));
  }
  if (x.rows() == 0) throw ContractError("pick_mean: empty batch");
  std::vector<int> picks(labels.begin(), labels.end());
  for (int y : picks) {
    if (y < 0 || y >= x.cols()) {
      throw IndexError(fmt::format("pick_mean: label {} outside [0, {})", y, x.cols()));
    }
  }
  const double inv = 1.0 / static_cast<double>(x.rows());
  double acc = 0.0;
  for (Index r = 0; r < x.rows(); ++r) acc += x.value()(r, picks[static_cast<std::size_t>(r)]);
  Matrix out(1, 1);
  out(0, 0) = acc * inv;
  const int ix = x.node_id();
  const Index rows = x.rows();
  const Index cols = x.cols();
  return tape.record(std::move(out), {ix},
                     [ix, rows, cols, inv, picks = std::move(picks)](Tape& t, int self) {
                       Matrix dx = Matrix::Zero(rows, cols);
                       const double g = t.grad(self)(0, 0) * inv;
                       for (Index r = 0; r < rows; ++r) dx(r, picks[static_cast<std::size_t>(r)]) = g;
                       t.accumulate(ix, dx);
                     },
                     "pick_mean");
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& tape = owner(parts.front(), "concat_rows");
  const Index cols = parts.front().cols();
  Index rows = 0;
  std::vector<int> ids;
  std::vector<Index> offsets;
  for (const Tensor& p : parts) {
    tape.check_owned(p, "concat_rows");
    if (p.cols() != cols) {
      throw DimensionError(fmt::format("concat_rows: shape mismatch {} vs {}",
                                       shape_str(parts.front().value()), shape_str(p.value())));
    }
    ids.push_back(p.node_id());
    offsets.push_back(rows);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  }
  std::vector<int> inputs = ids;
  return tape.record(std::move(out), std::move(inputs),
                     [ids, offsets](Tape& t, int self) {
                       const Matrix& g = t.grad(self);
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         if (!t.requires_grad(ids[i])) continue;
                         t.accumulate(ids[i], g.middleRows(offsets[i], t.value(ids[i]).rows()));
                       }
                     },
                     "concat_rows");
}

Tensor slice_rows(const Tensor& x, Index begin, Index count) {
  Tape& tape = owner(x, "slice_rows");
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw DimensionError(fmt::format("slice_rows: rows [{}, {}) outside {}", begin, begin + count,
                                     shape_str(x.value())));
  }
  const int ix = x.node_id();
  const Index rows = x.rows();
  const Index cols = x.cols();
  return tape.record(x.value().middleRows(begin, count), {ix},
                     [ix, begin, count, rows, cols](Tape& t, int self) {
                       Matrix dx = Matrix::Zero(rows, cols);
                       dx.middleRows(begin, count) = t.grad(self);
                       t.accumulate(ix, dx);
                     },
                     "slice_rows");
}

// ---- optimization ---------------------------------------------------------

struct AdamAccess {
  static void step(Parameter& p, const AdamConfig& cfg) {
    p.step_count_ += 1;
    const double t = static_cast<double>(p.step_count_);
    p.adam_m_ = cfg.beta1 * p.adam_m_ + (1.0 - cfg.beta1) * p.grad_;
    p.adam_v_ = cfg.beta2 * p.adam_v_ + (1.0 - cfg.beta2) * p.grad_.cwiseProduct(p.grad_);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    p.value_.array() -=
        cfg.lr * (p.adam_m_.array() / c1) / ((p.adam_v_.array() / c2).sqrt() + cfg.eps);
    p.grad_.setZero();
  }
};

void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError(fmt::format("adam: learning rate must be > 0, got {}", cfg.lr));
  for (Parameter* p : params) AdamAccess::step(*p, cfg);
}

// ---- gradient checking ----------------------------------------------------

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

GradCheckReport grad_check(const Fragment& fragment, std::span<const NamedParameter> params,
                           double tolerance, double eps) {
  for (const auto& np : params) np.param->zero_grad();
  std::vector<Matrix> analytic;
  {
    Tape tape;
    Tensor loss = fragment(tape);
    tape.backward(loss);
    for (const auto& np : params) analytic.push_back(np.param->grad());
  }
  auto evaluate = [&fragment] {
    Tape tape;
    return fragment(tape).item();
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k].param;
    GradCheckEntry entry;
    entry.name = params[k].name;
    Matrix& v = p.mutable_value();
    for (Index i = 0; i < v.size(); ++i) {
      const double original = v.data()[i];
      v.data()[i] = original + eps;
      const double up = evaluate();
      v.data()[i] = original - eps;
      const double down = evaluate();
      v.data()[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-7});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(a));
      entry.max_abs_numeric = std::max(entry.max_abs_numeric, std::abs(numeric));
    }
    report.entries.push_back(std::move(entry));
  }
  for (const auto& np : params) np.param->zero_grad();
  return report;
}

}  // namespace dirl::ad
