#include "ddtr/tensor.hpp"

#include <cstring>
#include <sstream>

namespace ddtr {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

static void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

Tensor::Tensor() : Tensor(Shape{1}, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::TensorNode>()) {
  check_shape(shape);
  node_->data.assign(element_count(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : node_(std::make_shared<detail::TensorNode>()) {
  check_shape(shape);
  if (element_count(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not hold " + std::to_string(data.size()) +
                     " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::matrix(const RowMatrix& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.matrix() = m;
  return t;
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= dim()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::rows() const {
  if (dim() != 2) throw ShapeError("expected a matrix, got " + to_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (dim() != 2) throw ShapeError("expected a matrix, got " + to_string(shape()));
  return node_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
  return node_->data[0];
}

ConstMatrixMap Tensor::matrix() const {
  return ConstMatrixMap(node_->data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

MatrixMap Tensor::matrix() {
  return MatrixMap(node_->data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor " + to_string(shape()) + " has no gradient");
  return node_->grad;
}

std::span<double> Tensor::grad_buffer() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

ConstMatrixMap Tensor::grad_matrix() const {
  auto g = grad();
  return ConstMatrixMap(g.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

MatrixMap Tensor::grad_matrix_buffer() const {
  auto g = grad_buffer();
  return MatrixMap(g.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data); }

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != size()) {
    throw ShapeError("cannot reshape " + to_string(this->shape()) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), node_->data);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

bool needs_grad(std::initializer_list<const Tensor*> operands) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : operands) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void Tape::record(std::vector<Tensor> inputs, std::vector<Tensor> outputs, BackwardFn backward) {
  if (backward_done_) throw std::logic_error("cannot record onto a tape after backward(); clear it first");
  for (auto& out : outputs) {
    out.set_requires_grad(true);
    out.node()->tape = this;
    out.node()->generation = generation_;
  }
  entries_.push_back(Entry{std::move(inputs), std::move(outputs), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_) throw std::logic_error("backward() already ran on this tape; clear() before reuse");
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + to_string(loss.shape()));
  const auto& node = loss.node();
  if (node->tape != this || node->generation != generation_) {
    throw std::logic_error("loss was not recorded on this tape (stale or foreign tape)");
  }
  Tensor root = loss;
  root.grad_buffer()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    bool any = false;
    for (const auto& out : it->outputs) any = any || out.has_grad();
    if (any) it->backward();
  }
  // recorded operands the loss does not depend on hold an explicit zero gradient
  for (auto& e : entries_) {
    for (auto& t : e.inputs) {
      if (t.requires_grad()) t.grad_buffer();
    }
  }
  backward_done_ = true;
}

void Tape::clear() {
  for (auto& e : entries_) {
    for (auto& t : e.inputs) t.clear_grad();
    for (auto& t : e.outputs) t.clear_grad();
  }
  entries_.clear();
  ++generation_;
  backward_done_ = false;
}

}  // namespace ddtr
