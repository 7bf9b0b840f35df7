#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pfsr::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles. Most of the engine works on rank-2
// tensors (rows = sequence positions, cols = channels); rank-0/1 are used for
// scalars and vectors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  // Rank-2 helpers. A rank-1 tensor is treated as a single row.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : rows_slow(); }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : cols_slow(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  double item() const;
  bool all_finite() const;
  void fill(double v);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_slow() const;
  std::size_t cols_slow() const;

  Shape shape_;
  std::vector<double> data_;
};

// Throws DimensionError unless a and b have identical shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);
// Throws NumericError if t holds a non-finite value.
void require_finite(const Tensor& t, const char* what);

}  // namespace pfsr::diff
