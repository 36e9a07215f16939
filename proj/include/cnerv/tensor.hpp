#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cnerv/error.hpp"

namespace cnerv {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

template <typename Scalar>
struct TensorImpl {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Vector data;
  bool requires_grad = false;
  Vector grad;  // empty unless requires_grad

  void accumulate(const Vector& g) { grad += g; }
};

}  // namespace detail

/// Dense row-major n-dimensional array with optional gradient accumulator.
///
/// Copies share storage (handle semantics). Forward ops never modify their
/// inputs; the only in-place mutations are gradient accumulation during
/// GradTape::backward and optimizer updates on leaf parameters.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Impl = detail::TensorImpl<Scalar>;

  Tensor() = default;

  Tensor(Shape shape, Vector data, bool requires_grad = false) : impl_(std::make_shared<Impl>()) {
    for (Index d : shape) {
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    if (shape_size(shape) != data.size()) {
      throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                       " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(shape, Vector::Zero(shape_size(shape)), requires_grad);
  }
  static Tensor constant(const Shape& shape, Scalar value) {
    return Tensor(shape, Vector::Constant(shape_size(shape), value));
  }
  static Tensor scalar(Scalar value) { return Tensor({1}, Vector::Constant(1, value)); }
  static Tensor from(const Shape& shape, std::initializer_list<Scalar> values) {
    Vector v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar x : values) v[i++] = x;
    return Tensor(shape, std::move(v));
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index dim(Index axis) const { return impl_->shape.at(static_cast<std::size_t>(axis)); }
  Index size() const { return impl_->data.size(); }

  const Vector& data() const { return impl_->data; }
  /// Mutable access for leaves (parameters, optimizer state). Never call on tape outputs.
  Vector& mutable_data() { return impl_->data; }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  Scalar operator[](Index i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    if (flag) {
      if (impl_->grad.size() != impl_->data.size()) impl_->grad = Vector::Zero(impl_->data.size());
    } else {
      impl_->grad.resize(0);
    }
  }
  const Vector& grad() const {
    if (!impl_->requires_grad) throw Error("grad() on a tensor that does not require grad");
    return impl_->grad;
  }
  Vector& mutable_grad() {
    if (!impl_->requires_grad) throw Error("grad() on a tensor that does not require grad");
    return impl_->grad;
  }
  void zero_grad() {
    if (impl_->requires_grad) impl_->grad.setZero();
  }

  /// Deep copy of values without gradient tracking.
  Tensor detach() const { return Tensor(shape(), data()); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), data().template cast<Other>());
  }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of executed differentiable ops.
///
/// Constructing a tape makes it the active tape of the calling thread until
/// it is destroyed; ops executed while a tape is active and at least one
/// input requires grad append a backward closure. backward() replays the
/// closures in exact reverse order.
template <typename Scalar>
class GradTape {
 public:
  GradTape() : previous_(active_) { active_ = this; }
  ~GradTape() { active_ = previous_; }
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return active_; }

  void record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }
  std::size_t size() const { return entries_.size(); }

  void backward(const Tensor<Scalar>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ShapeError("backward() requires a scalar loss, got " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) throw Error("backward() on a loss that was not produced under an active tape");
    loss.impl()->grad[0] += Scalar(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  static inline thread_local GradTape* active_ = nullptr;
  std::vector<std::function<void()>> entries_;
  GradTape* previous_;
};

}  // namespace cnerv
