#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace casdet::numerics {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient slot of the
// same length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Only valid for single-element tensors.
  double item() const;

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zero gradient if none is present.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  // Same data, new shape. Throws DimensionError if the element count differs.
  void reshape(Shape shape);

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

}  // namespace casdet::numerics
