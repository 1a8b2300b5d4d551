#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace divlab {

// Dense row-major 64-bit float array. Rank 0 (empty shape) is a scalar.
// All engine math runs in double precision.
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<int64_t> shape);
  Array(std::vector<int64_t> shape, std::vector<double> values);

  static Array scalar(double v) { return Array({}, {v}); }
  static Array zeros_like(const Array& other) { return Array(other.shape_); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(values_.size()); }

  // Rank-2 accessors.
  int64_t rows() const;
  int64_t cols() const;

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double item() const;  // requires size() == 1

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  std::string shape_str() const;  // e.g. "[3,4]"

 private:
  std::vector<int64_t> shape_;
  std::vector<double> values_;
};

int64_t shape_size(const std::vector<int64_t>& shape);

// y += a * x, shapes must match. Used for detached parameter updates.
void axpy_inplace(Array& y, double a, const Array& x);

}  // namespace divlab
