#include "porenet/nn/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "porenet/error.hpp"

namespace porenet::nn {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

namespace {

void check_extents(const Shape& shape) {
  for (int e : shape) {
    if (e <= 0) throw Error(ErrorKind::kInvalidArgument, "tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_size(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_size(shape_)) {
    throw Error(ErrorKind::kInvalidArgument, "tensor of shape " + shape_string(shape_) + " given " +
                                                 std::to_string(values_.size()) + " values");
  }
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), T{});
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  grad_.assign(values_.size(), T{});
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(values_.begin(), values_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw Error(ErrorKind::kInvalidArgument, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

void expect_shape(const std::string& what, const Shape& expected, const Shape& actual) {
  if (expected != actual) {
    throw Error(ErrorKind::kInvalidArgument,
                what + ": expected shape " + shape_string(expected) + ", got " + shape_string(actual));
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace porenet::nn
