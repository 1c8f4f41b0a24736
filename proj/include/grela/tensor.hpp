#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "grela/memory.hpp"

namespace grela {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  memory::Buffer<double> data;
  memory::Buffer<double> grad;  // empty until a gradient flows in
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major double tensor. A Tensor is a handle: copies share storage,
// which is what lets the tape route gradients back to parameters. Use
// clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::span<const double> values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{}, v); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  // Extent of axis i; negative i counts from the back.
  std::size_t dim(int i) const;

  std::span<double> data() { return {impl_->data.data(), impl_->data.size()}; }
  std::span<const double> data() const { return {impl_->data.data(), impl_->data.size()}; }
  double* ptr() { return impl_->data.data(); }
  const double* ptr() const { return impl_->data.data(); }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::initializer_list<std::size_t> index) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->grad.empty(); }
  std::span<const double> grad() const { return {impl_->grad.data(), impl_->grad.size()}; }
  std::span<double> grad_mut() {
    impl_->ensure_grad();
    return {impl_->grad.data(), impl_->grad.size()};
  }
  // Gradient as a detached tensor (zeros when none has flowed in).
  Tensor grad_tensor() const;
  void zero_grad();

  Tensor clone() const;
  // Same shape and values; the result is a leaf with no gradient.
  Tensor detach() const { return clone(); }
  Tensor reshape(Shape shape) const;  // differentiable view-copy, see ops

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  bool all_finite() const;

  const std::shared_ptr<TensorImpl>& impl() const noexcept { return impl_; }
  static Tensor from_impl(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace grela
