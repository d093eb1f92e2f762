#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace pvnow {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::string to_string(DType dtype);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on misuse of the recorded graph (non-scalar loss, detached or consumed graph).
class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Calls `fn.template operator()<T>()` with T matching the runtime dtype.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::f64) return fn.template operator()<double>();
  return fn.template operator()<float>();
}

namespace detail {

inline constexpr std::size_t no_producer = std::numeric_limits<std::size_t>::max();

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  std::vector<float> data32;
  std::vector<double> data64;
  std::vector<float> grad32;
  std::vector<double> grad64;
  bool has_grad = false;
  bool requires_grad = false;
  // Position of the producing op on the tape, valid only for the matching generation.
  std::uint64_t tape_generation = 0;
  std::size_t tape_index = no_producer;
};

}  // namespace detail

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// Tensor is a handle: copies share storage. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f32);

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype = DType::f32);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const;
  DType dtype() const { return impl_->dtype; }

  template <class T>
  std::span<T> data();
  template <class T>
  std::span<const T> data() const;

  double item() const;
  double at(std::size_t flat) const;
  void set(std::size_t flat, double value);
  std::vector<double> values() const;

  bool requires_grad() const { return impl_->requires_grad; }
  /// Only leaves (tensors not produced by a recorded op) may change this flag.
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const { return impl_->has_grad; }
  template <class T>
  std::span<T> grad();
  template <class T>
  std::span<const T> grad() const;
  /// Allocates a zero gradient buffer on first use.
  template <class T>
  std::span<T> grad_mut() const;
  std::vector<double> grad_values() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const { return clone(); }
  Tensor to(DType dtype) const;
  /// Overwrite contents from another tensor of the same shape (dtype may differ).
  void assign(const Tensor& other);

  bool same(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl& impl() const { return *impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

template <class T>
std::span<T> Tensor::data() {
  if (impl_->dtype != dtype_of<T>()) throw std::logic_error("Tensor::data: dtype mismatch");
  if constexpr (std::is_same_v<T, float>) return impl_->data32;
  else return impl_->data64;
}

template <class T>
std::span<const T> Tensor::data() const {
  if (impl_->dtype != dtype_of<T>()) throw std::logic_error("Tensor::data: dtype mismatch");
  if constexpr (std::is_same_v<T, float>) return impl_->data32;
  else return impl_->data64;
}

template <class T>
std::span<T> Tensor::grad() {
  if (!impl_->has_grad) throw AutogradError("tensor has no gradient");
  if constexpr (std::is_same_v<T, float>) return impl_->grad32;
  else return impl_->grad64;
}

template <class T>
std::span<const T> Tensor::grad() const {
  if (!impl_->has_grad) throw AutogradError("tensor has no gradient");
  if constexpr (std::is_same_v<T, float>) return impl_->grad32;
  else return impl_->grad64;
}

template <class T>
std::span<T> Tensor::grad_mut() const {
  if (impl_->dtype != dtype_of<T>()) throw std::logic_error("Tensor::grad_mut: dtype mismatch");
  if (!impl_->has_grad) {
    if constexpr (std::is_same_v<T, float>) impl_->grad32.assign(numel(), 0.0f);
    else impl_->grad64.assign(numel(), 0.0);
    impl_->has_grad = true;
  }
  if constexpr (std::is_same_v<T, float>) return impl_->grad32;
  else return impl_->grad64;
}

}  // namespace pvnow
