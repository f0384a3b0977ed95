#include "casdet/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "casdet/error.hpp"

namespace casdet::numerics {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (shape_[i] == 0) {
      throw DimensionError("tensor axis " + std::to_string(i) +
                           " has zero extent");
    }
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_to_string(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " +
                         shape_to_string(shape_));
  }
  return data_[0];
}

std::span<double> Tensor::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw Error("tensor has no gradient");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) +
                         " to " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace casdet::numerics
