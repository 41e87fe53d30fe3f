#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace duodiff {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t numel(const Shape& shape);

/// Raised when operand shapes do not conform to an op's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
  ShapeError(const std::string& op, std::initializer_list<Shape> shapes);
};

/// Raised when a NaN/Inf shows up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major float32 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  /// Size of axis `axis`; negative values count from the back.
  int64_t dim(int axis) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Value of a single-element tensor.
  float item() const;

  Tensor reshaped(Shape shape) const;
  void fill(float v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Exact bit-level comparison of shape and payload.
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Largest absolute elementwise difference; shapes must match.
float max_abs_diff(const Tensor& a, const Tensor& b);

/// Rows `indices` of the leading axis, in order.
Tensor take_rows(const Tensor& t, std::span<const int64_t> indices);

/// Writes `src` rows into `dst` rows `indices` of the leading axis.
void put_rows(Tensor& dst, std::span<const int64_t> indices, const Tensor& src);

/// Row `i` of the leading axis as its own tensor.
Tensor row(const Tensor& t, int64_t i);

}  // namespace duodiff
