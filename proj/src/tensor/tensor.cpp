#include "pvnow/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace pvnow {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, DType dtype) : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("Tensor: zero-sized dimension in shape " + to_string(shape));
  }
  impl_->dtype = dtype;
  const std::size_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  if (dtype == DType::f32) impl_->data32.assign(n, 0.0f);
  else impl_->data64.assign(n, 0.0);
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>() {
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (values.size() != t.numel()) {
    throw ShapeError("Tensor::from_values: " + std::to_string(values.size()) +
                     " values for shape " + to_string(t.shape()));
  }
  dispatch(dtype, [&]<class T>() {
    auto d = t.data<T>();
    std::transform(values.begin(), values.end(), d.begin(),
                   [](double v) { return static_cast<T>(v); });
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

std::size_t Tensor::numel() const { return shape_numel(impl_->shape); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("Tensor::item: tensor has shape " + to_string(shape()));
  return at(0);
}

double Tensor::at(std::size_t flat) const {
  return dispatch(dtype(), [&]<class T>() { return static_cast<double>(data<T>()[flat]); });
}

void Tensor::set(std::size_t flat, double value) {
  dispatch(dtype(), [&]<class T>() { data<T>()[flat] = static_cast<T>(value); });
}

std::vector<double> Tensor::values() const {
  return dispatch(dtype(), [&]<class T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw AutogradError("set_requires_grad: only leaf tensors can change this flag");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->tape_index == detail::no_producer; }

std::vector<double> Tensor::grad_values() const {
  return dispatch(dtype(), [&]<class T>() {
    auto g = grad<T>();
    return std::vector<double>(g.begin(), g.end());
  });
}

void Tensor::zero_grad() {
  impl_->grad32.clear();
  impl_->grad64.clear();
  impl_->has_grad = false;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->dtype = impl_->dtype;
  t.impl_->data32 = impl_->data32;
  t.impl_->data64 = impl_->data64;
  return t;
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  Tensor t(shape(), target);
  t.assign(*this);
  return t;
}

void Tensor::assign(const Tensor& other) {
  if (other.shape() != shape()) {
    throw ShapeError("Tensor::assign: shape " + to_string(other.shape()) + " into " +
                     to_string(shape()));
  }
  dispatch(dtype(), [&]<class T>() {
    auto dst = data<T>();
    dispatch(other.dtype(), [&]<class U>() {
      auto src = other.data<U>();
      std::transform(src.begin(), src.end(), dst.begin(),
                     [](U v) { return static_cast<T>(v); });
    });
  });
}

}  // namespace pvnow
