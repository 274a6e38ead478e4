#include "lostgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lostgan/error.hpp"

namespace lostgan {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw Error(ErrorCode::kShapeMismatch, "negative dimension in " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(static_cast<std::size_t>(numel_of(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (numel_of(shape_) != static_cast<std::int64_t>(values_.size())) {
    throw Error(ErrorCode::kShapeMismatch, "value count " + std::to_string(values_.size()) +
                                               " does not fill " + shape_string(shape_));
  }
}

std::int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw Error(ErrorCode::kShapeMismatch, "axis out of range");
  return shape_[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::offset(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw Error(ErrorCode::kShapeMismatch, "index rank does not match " + shape_string(shape_));
  }
  std::int64_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[axis]) throw Error(ErrorCode::kIndexOutOfRange, "tensor index");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::int64_t> index) { return values_[offset(index)]; }
double Tensor::at(std::initializer_list<std::int64_t> index) const { return values_[offset(index)]; }

double Tensor::item() const {
  if (values_.size() != 1) throw Error(ErrorCode::kShapeMismatch, "item() on " + shape_string(shape_));
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  if (numel_of(shape) != numel()) {
    throw Error(ErrorCode::kShapeMismatch,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(double value) noexcept { std::fill(values_.begin(), values_.end(), value); }

void Tensor::add_(const Tensor& other) {
  if (other.numel() != numel()) {
    throw Error(ErrorCode::kShapeMismatch,
                "add_ " + shape_string(other.shape_) + " into " + shape_string(shape_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
}

void Tensor::scale_(double factor) noexcept {
  for (auto& v : values_) v *= factor;
}

bool all_finite(const Tensor& t) noexcept {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace lostgan
