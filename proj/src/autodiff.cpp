#include "rulstm/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rulstm/errors.hpp"

namespace rulstm::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

void check_rank(const Tensor& t, const char* op) {
  if (t.rank() > 2) {
    throw DimensionError(std::string(op) + ": tensors of rank > 2 are unsupported, got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

std::vector<double>& ensure_grad(detail::Node& n) {
  if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape.size() > 2) {
    throw DimensionError("tensor rank > 2 unsupported: " + shape_string(shape));
  }
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const { return shape_size(shape()); }
std::size_t Tensor::rows() const { return rows_of(shape()); }
std::size_t Tensor::cols() const { return cols_of(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar " + shape_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= size()) throw IndexError("tensor index " + std::to_string(i) + " out of range");
  return node_->data[i];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) {
    throw IndexError("tensor index (" + std::to_string(row) + "," + std::to_string(col) +
                     ") out of range for " + shape_string(shape()));
  }
  return node_->data[row * cols() + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const {
  return node_ && !node_->grad.empty() && node_->grad.size() == node_->data.size();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  return Tensor(shape(), node_->data, false);
}

// ---------------------------------------------------------------------------
// Parameter

Parameter::Parameter(const Tensor& initial)
    : value_(initial.shape(), std::vector<double>(initial.data().begin(), initial.data().end()),
             true),
      momentum_(initial.size(), 0.0) {}

Parameter::Parameter(const Parameter& other) : momentum_(other.momentum_) {
  if (other.value_.defined()) {
    value_ = Tensor(other.value_.shape(),
                    std::vector<double>(other.value_.data().begin(), other.value_.data().end()),
                    true);
  }
}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) {
    Parameter copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Parameter::reset_momentum() { std::fill(momentum_.begin(), momentum_.end(), 0.0); }

void sgd_step(std::span<Parameter* const> params, double lr, double momentum) {
  for (Parameter* p : params) {
    if (!p->value_.has_grad()) {
      throw ContractError("sgd_step: parameter of shape " + shape_string(p->value_.shape()) +
                          " has no gradient");
    }
  }
  for (Parameter* p : params) {
    auto values = p->value_.mutable_data();
    auto grad = p->value_.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      p->momentum_[i] = momentum * p->momentum_[i] + grad[i];
      values[i] -= lr * p->momentum_[i];
    }
    p->value_.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Tape

void Tape::clear() {
  records_.clear();
  outputs_.clear();
}

Tensor Tape::make_output(Shape shape, std::vector<double> data,
                         std::initializer_list<const Tensor*> inputs) {
  bool needs = false;
  if (recording_) {
    for (const Tensor* in : inputs) needs = needs || in->requires_grad();
  }
  return Tensor(std::move(shape), std::move(data), needs);
}

void Tape::record(const Tensor& output, std::function<void()> fn) {
  if (!output.requires_grad()) return;
  records_.push_back({output.node_.get(), std::move(fn)});
  outputs_.insert(output.node_.get());
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, "matmul");
  check_rank(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  Tensor y = make_output({m, n}, std::move(out), {&a, &b});
  if (y.requires_grad()) {
    record(y, [an = a.node_, bn = b.node_, yn = y.node_, m, k, n] {
      ConstMap dy(yn->grad.data(), m, n);
      if (an->requires_grad) {
        MutMap(ensure_grad(*an).data(), m, k).noalias() += dy * ConstMap(bn->data.data(), k, n).transpose();
      }
      if (bn->requires_grad) {
        MutMap(ensure_grad(*bn).data(), k, n).noalias() += ConstMap(an->data.data(), m, k).transpose() * dy;
      }
    });
  }
  return y;
}

Tensor Tape::matmul_transposed(const Tensor& a, const Tensor& b) {
  check_rank(a, "matmul_transposed");
  check_rank(b, "matmul_transposed");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_transposed: inner dimensions differ, " +
                         shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), n, k).transpose();
  Tensor y = make_output({m, n}, std::move(out), {&a, &b});
  if (y.requires_grad()) {
    record(y, [an = a.node_, bn = b.node_, yn = y.node_, m, k, n] {
      ConstMap dy(yn->grad.data(), m, n);
      if (an->requires_grad) {
        MutMap(ensure_grad(*an).data(), m, k).noalias() += dy * ConstMap(bn->data.data(), n, k);
      }
      if (bn->requires_grad) {
        MutMap(ensure_grad(*bn).data(), n, k).noalias() +=
            dy.transpose() * ConstMap(an->data.data(), m, k);
      }
    });
  }
  return y;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  if (y.requires_grad()) {
    record(y, [an = a.node_, bn = b.node_, yn = y.node_] {
      for (auto* in : {an.get(), bn.get()}) {
        if (!in->requires_grad) continue;
        auto& g = ensure_grad(*in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  if (y.requires_grad()) {
    record(y, [an = a.node_, bn = b.node_, yn = y.node_] {
      if (an->requires_grad) {
        auto& g = ensure_grad(*an);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& g = ensure_grad(*bn);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * an->data[i];
      }
    });
  }
  return y;
}

Tensor Tape::sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x.data()[i]);
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, yn = y.node_] {
      auto& g = ensure_grad(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = yn->data[i];
        g[i] += yn->grad[i] * s * (1.0 - s);
      }
    });
  }
  return y;
}

Tensor Tape::tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, yn = y.node_] {
      auto& g = ensure_grad(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double t = yn->data[i];
        g[i] += yn->grad[i] * (1.0 - t * t);
      }
    });
  }
  return y;
}

Tensor Tape::relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.data()[i]);
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, yn = y.node_] {
      auto& g = ensure_grad(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xn->data[i] > 0.0) g[i] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor Tape::elementwise(ElementwiseKind kind, std::span<const Tensor> args) {
  const bool binary = kind == ElementwiseKind::add || kind == ElementwiseKind::mul;
  const std::size_t expected = binary ? 2 : 1;
  if (args.size() != expected) {
    throw ContractError("elementwise: expected " + std::to_string(expected) + " arguments, got " +
                        std::to_string(args.size()));
  }
  switch (kind) {
    case ElementwiseKind::add: return add(args[0], args[1]);
    case ElementwiseKind::mul: return mul(args[0], args[1]);
    case ElementwiseKind::sigmoid: return sigmoid(args[0]);
    case ElementwiseKind::tanh: return tanh(args[0]);
    case ElementwiseKind::relu: return relu(args[0]);
  }
  throw ContractError("elementwise: unknown kind");
}

Tensor Tape::add_bias(const Tensor& x, const Tensor& bias) {
  check_rank(x, "add_bias");
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.size() != c || bias.rank() > 1) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                         " does not match columns of " + shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.data()[j];
  Tensor y = make_output(x.shape(), std::move(out), {&x, &bias});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, bn = bias.node_, yn = y.node_, r, c] {
      if (xn->requires_grad) {
        auto& g = ensure_grad(*xn);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = ensure_grad(*bn);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[j] += yn->grad[i * c + j];
      }
    });
  }
  return y;
}

Tensor Tape::scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.data()[i];
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, yn = y.node_, factor] {
      auto& g = ensure_grad(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * yn->grad[i];
    });
  }
  return y;
}

Tensor Tape::scale_rows(const Tensor& x, const Tensor& weights) {
  check_rank(x, "scale_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (weights.size() != r || (weights.rank() == 2 && weights.cols() != 1)) {
    throw DimensionError("scale_rows: weights " + shape_string(weights.shape()) +
                         " do not match rows of " + shape_string(x.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = weights.data()[i] * x.data()[i * c + j];
  Tensor y = make_output(x.shape(), std::move(out), {&x, &weights});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, wn = weights.node_, yn = y.node_, r, c] {
      if (xn->requires_grad) {
        auto& g = ensure_grad(*xn);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += wn->data[i] * yn->grad[i * c + j];
      }
      if (wn->requires_grad) {
        auto& g = ensure_grad(*wn);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i] += xn->data[i * c + j] * yn->grad[i * c + j];
      }
    });
  }
  return y;
}

Tensor Tape::slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  check_rank(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (begin + count > c || count == 0) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.data().begin() + i * c + begin, count, out.begin() + i * count);
  Shape shape = x.rank() == 2 ? Shape{r, count} : Shape{count};
  Tensor y = make_output(std::move(shape), std::move(out), {&x});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, yn = y.node_, r, c, begin, count] {
      auto& g = ensure_grad(*xn);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += yn->grad[i * count + j];
    });
  }
  return y;
}

Tensor Tape::concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (parts.size() == 1) return parts[0];
  const std::size_t rank = parts[0].rank();
  for (const auto& p : parts) {
    check_rank(p, "concat");
    if (p.rank() != rank) {
      throw DimensionError("concat: rank mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
  }
  if (rank == 0) throw DimensionError("concat: scalars cannot be concatenated");
  const bool along_rows = rank == 2 && axis == 0;
  if (axis > rank - 1) throw DimensionError("concat: axis " + std::to_string(axis) + " out of range");

  std::vector<double> out;
  Shape shape;
  std::vector<std::size_t> widths;
  const std::size_t r = parts[0].rows();
  if (along_rows) {
    const std::size_t c = parts[0].cols();
    std::size_t total_rows = 0;
    for (const auto& p : parts) {
      if (p.cols() != c) {
        throw DimensionError("concat: column mismatch " + shape_string(parts[0].shape()) +
                             " vs " + shape_string(p.shape()));
      }
      total_rows += p.rows();
      widths.push_back(p.rows());
      out.insert(out.end(), p.data().begin(), p.data().end());
    }
    shape = {total_rows, c};
  } else {
    std::size_t total_cols = 0;
    for (const auto& p : parts) {
      if (p.rows() != r) {
        throw DimensionError("concat: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                             shape_string(p.shape()));
      }
      widths.push_back(p.cols());
      total_cols += p.cols();
    }
    out.resize(r * total_cols);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.cols();
      for (std::size_t i = 0; i < r; ++i)
        std::copy_n(p.data().begin() + i * w, w, out.begin() + i * total_cols + offset);
      offset += w;
    }
    shape = rank == 2 ? Shape{r, total_cols} : Shape{total_cols};
  }

  bool needs = false;
  if (recording_) {
    for (const auto& p : parts) needs = needs || p.requires_grad();
  }
  Tensor y(std::move(shape), std::move(out), needs);
  if (needs) {
    std::vector<NodePtr> inputs;
    for (const auto& p : parts) inputs.push_back(p.node_);
    record(y, [inputs = std::move(inputs), widths = std::move(widths), yn = y.node_, along_rows, r] {
      if (along_rows) {
        std::size_t offset = 0;
        for (const auto& in : inputs) {
          const std::size_t n = in->data.size();
          if (in->requires_grad) {
            auto& g = ensure_grad(*in);
            for (std::size_t i = 0; i < n; ++i) g[i] += yn->grad[offset + i];
          }
          offset += n;
        }
        return;
      }
      const std::size_t total = yn->data.size() / r;
      std::size_t offset = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::size_t w = widths[k];
        if (inputs[k]->requires_grad) {
          auto& g = ensure_grad(*inputs[k]);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * w + j] += yn->grad[i * total + offset + j];
        }
        offset += w;
      }
    });
  }
  return y;
}

Tensor Tape::sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor y = make_output({}, {total}, {&x});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, yn = y.node_] {
      auto& g = ensure_grad(*xn);
      for (double& v : g) v += yn->grad[0];
    });
  }
  return y;
}

Tensor Tape::softmax(const Tensor& x) {
  check_rank(x, "softmax");
  if (x.size() == 0) throw DimensionError("softmax: empty input");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* in = x.data().data() + i * c;
    double* o = out.data() + i * c;
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, yn = y.node_, r, c] {
      auto& g = ensure_grad(*xn);
      for (std::size_t i = 0; i < r; ++i) {
        const double* s = yn->data.data() + i * c;
        const double* dy = yn->grad.data() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += s[j] * dy[j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += s[j] * (dy[j] - dot);
      }
    });
  }
  return y;
}

Tensor Tape::dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = uniform01(rng) >= p ? keep_scale : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  if (y.requires_grad()) {
    record(y, [xn = x.node_, yn = y.node_, mask = std::move(mask)] {
      auto& g = ensure_grad(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * yn->grad[i];
    });
  }
  return y;
}

Tensor Tape::cross_entropy(const Tensor& scores, std::span<const std::size_t> targets) {
  check_rank(scores, "cross_entropy");
  const std::size_t r = scores.rows(), c = scores.cols();
  if (targets.size() != r) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_string(scores.shape()) + " scores");
  }
  std::vector<double> probs(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    const double* in = scores.data().data() + i * c;
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(in[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(in[j] - log_z);
    total += log_z - in[targets[i]];
  }
  Tensor y = make_output({}, {total / static_cast<double>(r)}, {&scores});
  if (y.requires_grad()) {
    std::vector<std::size_t> t(targets.begin(), targets.end());
    record(y, [sn = scores.node_, yn = y.node_, probs = std::move(probs), t = std::move(t), r, c] {
      auto& g = ensure_grad(*sn);
      const double scale = yn->grad[0] / static_cast<double>(r);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double onehot = j == t[i] ? 1.0 : 0.0;
          g[i * c + j] += scale * (probs[i * c + j] - onehot);
        }
      }
    });
  }
  return y;
}

Tensor Tape::cross_entropy(const Tensor& scores, std::size_t target) {
  const std::size_t t[] = {target};
  return cross_entropy(scores, t);
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!outputs_.contains(loss.node_.get())) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  for (auto& rec : records_) rec.output->grad.assign(rec.output->data.size(), 0.0);
  loss.node_->grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

}  // namespace rulstm::ad
