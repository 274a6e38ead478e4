#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lostgan {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Image-like data is laid out N x H x W x C.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor({}, value); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(values_.size()); }
  bool empty() const noexcept { return values_.empty(); }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double& operator[](std::int64_t i) noexcept { return values_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const noexcept { return values_[static_cast<std::size_t>(i)]; }

  double& at(std::initializer_list<std::int64_t> index);
  double at(std::initializer_list<std::int64_t> index) const;
  // Scalar value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);
  void fill(double value) noexcept;
  void add_(const Tensor& other);
  void scale_(double factor) noexcept;

  bool operator==(const Tensor& other) const = default;

 private:
  std::int64_t offset(std::initializer_list<std::int64_t> index) const;

  Shape shape_;
  std::vector<double> values_;
};

bool all_finite(const Tensor& t) noexcept;
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace lostgan
