#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace egcn {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major double array. Values are created once and treated as
/// immutable while they participate in a recorded computation graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor full(Shape shape, double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  /// Multi-index access, for tests and small matrices.
  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void fill(double v);
  void zero() { fill(0.0); }

  /// Same data, new shape (element count must match).
  Tensor reshaped(Shape s) const;

  /// Releases the buffer, keeping the shape (used to trim finished tape nodes).
  void release();

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace egcn
