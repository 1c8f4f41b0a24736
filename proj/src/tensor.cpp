#include "grela/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "grela/error.hpp"
#include "grela/ops.hpp"

namespace grela {

std::size_t shape_size(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
void check_extents(const Shape& shape) {
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  check_extents(shape);
  impl_->data.assign(shape_size(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::span<const double> values) : impl_(std::make_shared<TensorImpl>()) {
  check_extents(shape);
  if (shape_size(shape) != values.size())
    throw DimensionError("shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  impl_->data.assign(values.begin(), values.end());
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size())) {}

std::size_t Tensor::dim(int i) const {
  const int r = static_cast<int>(rank());
  const int k = i < 0 ? r + i : i;
  if (k < 0 || k >= r)
    throw BoundsError("axis " + std::to_string(i) + " out of range for " + shape_string(shape()));
  return impl_->shape[static_cast<std::size_t>(k)];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw BoundsError("index rank mismatch for " + shape_string(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t v : index) {
    if (v >= impl_->shape[axis]) throw BoundsError("index out of range for " + shape_string(shape()));
    flat = flat * impl_->shape[axis] + v;
    ++axis;
  }
  return impl_->data[flat];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_string(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), grad());
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(shape(), data()); }

Tensor Tensor::reshape(Shape shape) const { return ops::reshape(*this, std::move(shape)); }

bool Tensor::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace grela
