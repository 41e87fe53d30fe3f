#include "duodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace duodiff {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

ShapeError::ShapeError(const std::string& op, std::initializer_list<Shape> shapes)
    : std::invalid_argument([&] {
        std::string msg = op + ": shape mismatch";
        for (const auto& s : shapes) msg += " " + shape_str(s);
        return msg;
      }()) {}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d < 0) throw ShapeError("tensor: negative dimension in " + shape_str(shape_));
  data_.assign(static_cast<size_t>(numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
}

int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[static_cast<size_t>(axis)];
}

float Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item: tensor " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size())
    throw ShapeError("reshape", {shape_, shape});
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), static_cast<size_t>(a.size()) * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff", {a.shape(), b.shape()});
  float m = 0.0f;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

Tensor take_rows(const Tensor& t, std::span<const int64_t> indices) {
  if (t.rank() < 1) throw ShapeError("take_rows: scalar input");
  Shape out_shape = t.shape();
  const int64_t stride = t.size() / std::max<int64_t>(1, t.dim(0));
  out_shape[0] = static_cast<int64_t>(indices.size());
  Tensor out(out_shape);
  for (size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= t.dim(0)) throw ShapeError("take_rows: index out of range");
    std::copy_n(t.ptr() + indices[r] * stride, stride, out.ptr() + static_cast<int64_t>(r) * stride);
  }
  return out;
}

void put_rows(Tensor& dst, std::span<const int64_t> indices, const Tensor& src) {
  if (dst.rank() < 1 || src.rank() != dst.rank() || src.dim(0) != static_cast<int64_t>(indices.size()))
    throw ShapeError("put_rows", {dst.shape(), src.shape()});
  const int64_t stride = dst.size() / std::max<int64_t>(1, dst.dim(0));
  if (src.size() != stride * src.dim(0)) throw ShapeError("put_rows", {dst.shape(), src.shape()});
  for (size_t r = 0; r < indices.size(); ++r)
    std::copy_n(src.ptr() + static_cast<int64_t>(r) * stride, stride, dst.ptr() + indices[r] * stride);
}

Tensor row(const Tensor& t, int64_t i) {
  const int64_t idx[] = {i};
  Tensor r = take_rows(t, idx);
  Shape s(t.shape().begin() + 1, t.shape().end());
  return r.reshaped(s);
}

}  // namespace duodiff
