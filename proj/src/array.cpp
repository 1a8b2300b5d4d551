#include "divlab/array.hpp"

#include <cmath>
#include <sstream>

#include "divlab/errors.hpp"

namespace divlab {

int64_t shape_size(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (const int64_t d : shape) n *= d;
  return n;
}

Array::Array(std::vector<int64_t> shape)
    : shape_(std::move(shape)), values_(static_cast<size_t>(shape_size(shape_)), 0.0) {}

Array::Array(std::vector<int64_t> shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_size(shape_) != static_cast<int64_t>(values.size())) {
    throw ShapeError("Array: value count " + std::to_string(values.size()) +
                     " does not match shape " + Array(shape_).shape_str());
  }
  values_ = std::move(values);
}

int64_t Array::rows() const {
  if (rank() != 2) throw ShapeError("Array::rows: expected rank 2, got shape " + shape_str());
  return shape_[0];
}

int64_t Array::cols() const {
  if (rank() != 2) throw ShapeError("Array::cols: expected rank 2, got shape " + shape_str());
  return shape_[1];
}

double Array::item() const {
  if (size() != 1) throw ShapeError("Array::item: expected single element, got shape " + shape_str());
  return values_[0];
}

bool Array::all_finite() const {
  for (const double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Array::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

void axpy_inplace(Array& y, double a, const Array& x) {
  if (!y.same_shape(x)) {
    throw ShapeError("axpy: shape mismatch " + y.shape_str() + " vs " + x.shape_str());
  }
  double* yd = y.data();
  const double* xd = x.data();
  const int64_t n = y.size();
  for (int64_t i = 0; i < n; ++i) yd[i] += a * xd[i];
}

}  // namespace divlab
