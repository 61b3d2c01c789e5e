#include "egcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace egcn {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive axis in " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (int64_t d : shape_) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive axis in " + shape_str(shape_));
  }
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

namespace {
int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx) {
  if (idx.size() != shape.size()) {
    throw std::invalid_argument("Tensor::at: rank mismatch for " + shape_str(shape));
  }
  int64_t flat = 0;
  size_t i = 0;
  for (int64_t v : idx) {
    if (v < 0 || v >= shape[i]) throw std::out_of_range("Tensor::at: index out of range");
    flat = flat * shape[i] + v;
    ++i;
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<int64_t> idx) {
  return data_[static_cast<size_t>(flat_index(shape_, idx))];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return data_[static_cast<size_t>(flat_index(shape_, idx))];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != size()) {
    throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(s) +
                                " changes element count");
  }
  return Tensor(std::move(s), data_);
}

void Tensor::release() {
  data_.clear();
  data_.shrink_to_fit();
}

}  // namespace egcn
