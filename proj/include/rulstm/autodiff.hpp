#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors.
//
// Tensors are shared handles to a node holding shape, values and an optional
// gradient. Every operation is issued through a Tape, which records a
// backward closure whenever at least one input requires a gradient. Tensors
// are at most two-dimensional; a 1-D tensor of length n behaves as a single
// row [1 x n] wherever a matrix is expected.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace rulstm::ad {

using Shape = std::vector<std::size_t>;

/// The single generator type threaded through every stochastic operation.
using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) from the top 53 bits of one generator output.
double uniform01(Rng& rng);

std::string shape_string(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  /// Leading dimension when viewed as a matrix (1 for scalars and vectors).
  std::size_t rows() const;
  /// Trailing dimension when viewed as a matrix.
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Direct write access; reserved for initializers and optimizers.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy of the values with no gradient tracking.
  Tensor detach() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// A learnable tensor plus its SGD momentum buffer. Copies are deep.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(const Tensor& initial);
  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const Tensor& value() const { return value_; }
  Tensor& value() { return value_; }
  std::span<const double> momentum_buffer() const { return momentum_; }
  void reset_momentum();

 private:
  friend void sgd_step(std::span<Parameter* const>, double, double);
  Tensor value_;
  std::vector<double> momentum_;
};

enum class ElementwiseKind { add, mul, sigmoid, tanh, relu };

class Tape {
 public:
  /// A tape constructed with record=false never records; use it for
  /// inference where no gradient is needed.
  explicit Tape(bool record = true) : recording_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }
  void clear();

  Tensor matmul(const Tensor& a, const Tensor& b);
  /// a [m x k] times the transpose of b [n x k].
  Tensor matmul_transposed(const Tensor& a, const Tensor& b);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor sigmoid(const Tensor& x);
  Tensor tanh(const Tensor& x);
  Tensor relu(const Tensor& x);
  Tensor elementwise(ElementwiseKind kind, std::span<const Tensor> args);

  /// The one supported broadcast: bias [c] added to every row of x [r x c].
  Tensor add_bias(const Tensor& x, const Tensor& bias);
  Tensor scale(const Tensor& x, double factor);
  /// Row r of x [r x c] multiplied by weights [r x 1] (or [r]).
  Tensor scale_rows(const Tensor& x, const Tensor& weights);
  Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
  /// axis 0 stacks rows; axis 1 (or the last axis of 1-D inputs) joins columns.
  Tensor concat(std::span<const Tensor> parts, std::size_t axis);
  Tensor sum(const Tensor& x);

  /// Row-wise softmax with max subtraction.
  Tensor softmax(const Tensor& x);
  /// Inverted dropout: survivors are scaled by 1/(1-p). Identity when not
  /// training or when p == 0.
  Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);
  /// Mean over rows of -log softmax(scores[r])[targets[r]].
  Tensor cross_entropy(const Tensor& scores, std::span<const std::size_t> targets);
  Tensor cross_entropy(const Tensor& scores, std::size_t target);

  /// Populates gradients of every requires_grad tensor reachable from loss.
  /// Leaf gradients accumulate across calls; intermediate gradients are
  /// recomputed from scratch on each call.
  void backward(const Tensor& loss);

 private:
  using NodePtr = std::shared_ptr<detail::Node>;
  struct Record {
    detail::Node* output;
    std::function<void()> backward;
  };

  Tensor make_output(Shape shape, std::vector<double> data,
                     std::initializer_list<const Tensor*> inputs);
  void record(const Tensor& output, std::function<void()> fn);

  bool recording_;
  std::vector<Record> records_;
  std::unordered_set<const detail::Node*> outputs_;
};

/// buffer <- momentum * buffer + grad; value <- value - lr * buffer; grad cleared.
void sgd_step(std::span<Parameter* const> params, double lr, double momentum);

}  // namespace rulstm::ad
