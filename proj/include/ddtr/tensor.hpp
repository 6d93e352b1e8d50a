#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ddtr {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Raised for operand shapes that do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

class Tape;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  const Tape* tape = nullptr;  // tape that produced this node, if any
  std::uint64_t generation = 0;
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Use clone() or
/// detach() for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor matrix(const RowMatrix& m);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  double item() const;
  double at(std::size_t i) const { return node_->data.at(i); }

  ConstMatrixMap matrix() const;
  MatrixMap matrix();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) const { node_->requires_grad = value; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; throws when no gradient has been accumulated.
  std::span<const double> grad() const;
  /// Gradient buffer, zero-initialized on first access. Gradient state is
  /// mutable through const handles so adjoints can run on captured operands.
  std::span<double> grad_buffer() const;
  ConstMatrixMap grad_matrix() const;
  MatrixMap grad_matrix_buffer() const;
  void clear_grad() const { node_->grad.clear(); }

  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Ordered record of differentiable operations for reverse-mode replay.
///
/// Operations record onto the tape that is active on the calling thread
/// (see Tape::Scope) whenever at least one operand requires a gradient.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// Makes a tape the recording target of the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  void record(std::vector<Tensor> inputs, std::vector<Tensor> outputs, BackwardFn backward);

  /// Fills dLoss/dT into every upstream tensor that requires a gradient.
  void backward(const Tensor& loss);
  /// Drops all entries and resets the gradients they reference.
  void clear();

  std::size_t size() const { return entries_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    std::vector<Tensor> outputs;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  std::uint64_t generation_ = 1;
  bool backward_done_ = false;
};

/// True when an operation on these operands should be recorded.
bool needs_grad(std::initializer_list<const Tensor*> operands);

}  // namespace ddtr
