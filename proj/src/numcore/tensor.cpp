#include "tsp/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "tsp/error.hpp"

namespace tsp::num {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  require(!shape_.empty(), "tensor shape must have at least one dimension");
  for (auto d : shape_) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(!shape_.empty(), "tensor shape must have at least one dimension");
  for (auto d : shape_) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape_));
  require(shape_size(shape_) == data_.size(),
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  require(r > 0, "matrix needs at least one row");
  const std::size_t c = rows.begin()->size();
  std::vector<double> flat;
  flat.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, "ragged matrix literal");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(flat));
}

double Tensor::item() const {
  require(data_.size() == 1, "item() requires a single-element tensor, shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace tsp::num
