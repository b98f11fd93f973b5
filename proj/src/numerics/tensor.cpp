#include "etmapg/numerics/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "etmapg/errors.hpp"

namespace etmapg {

namespace {

std::size_t extent_product(const std::vector<std::size_t>& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ConfigError("tensor extents must be positive, got " + shape_string(shape));
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(extent_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (extent_product(shape_) != values_.size()) {
    throw ConfigError("tensor " + etmapg::shape_string(shape_) + " cannot hold " +
                      std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

std::span<const double> Tensor::row(std::size_t r) const {
  return std::span<const double>(values_).subspan(r * cols(), cols());
}

std::span<double> Tensor::row(std::size_t r) {
  return std::span<double>(values_).subspan(r * cols(), cols());
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ContractViolation("item() on non-scalar tensor " + etmapg::shape_string(shape_));
  }
  return values_[0];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::same_shape(const Tensor& other) const { return shape_ == other.shape_; }

std::string Tensor::shape_string() const { return etmapg::shape_string(shape_); }

}  // namespace etmapg
