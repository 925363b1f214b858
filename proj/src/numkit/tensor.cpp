#include "emdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "emdiff/errors.hpp"

namespace emdiff {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw IndexError("axis out of range for " + shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return data_.empty() ? 0 : 1;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return data_.size();
  if (shape_.size() == 1) return shape_[0];
  return shape_[0] == 0 ? shape_size({shape_.begin() + 1, shape_.end()}) : data_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t r) {
  const auto c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) throw IndexError("row slice out of range");
  Shape s = shape_.size() >= 2 ? shape_ : Shape{rows(), cols()};
  s[0] = end - begin;
  const auto c = cols();
  return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                                  data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack_rows(std::span<const Tensor> items) {
  if (items.empty()) return Tensor({0, 0});
  const auto d = items.front().size();
  std::vector<double> data;
  data.reserve(items.size() * d);
  for (const auto& t : items) {
    if (t.size() != d) throw ShapeError("stack_rows: items differ in size");
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor({items.size(), d}, std::move(data));
}

}  // namespace emdiff
