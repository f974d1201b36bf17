#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace porenet::nn {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major tensor with an optional gradient buffer of the same shape.
/// Feature maps are laid out NHWC.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{});
  Tensor(Shape shape, std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  T operator[](std::size_t i) const { return values_[i]; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Allocates a zero gradient if absent.
  std::span<T> grad();
  std::span<const T> grad() const noexcept { return grad_; }
  void zero_grad();

  void fill(T v);
  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
};

/// Throws ErrorKind::kInvalidArgument naming what, expected and actual shape.
void expect_shape(const std::string& what, const Shape& expected, const Shape& actual);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace porenet::nn
