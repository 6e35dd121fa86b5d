#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gfn/common.hpp"

namespace gfn::inline GFN_ABI {

/// Shape of a rank-5 tensor laid out as (batch, channel, depth, height, width).
struct Shape {
  int n = 1;
  int c = 1;
  int d = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * d * h * w;
  }
  std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
  int dim(int axis) const;
  std::array<int, 5> dims() const { return {n, c, d, h, w}; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense row-major rank-5 array of Real values.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }
  static Tensor scalar(Real v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* ptr() { return data_.data(); }
  const Real* ptr() const { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int d, int h, int w) const {
    return (((static_cast<std::size_t>(n) * shape_.c + c) * shape_.d + d) *
                shape_.h +
            h) *
               shape_.w +
           w;
  }
  Real& at(int n, int c, int d, int h, int w) {
    return data_[offset(n, c, d, h, w)];
  }
  Real at(int n, int c, int d, int h, int w) const {
    return data_[offset(n, c, d, h, w)];
  }

  /// Scalar value of a single-element tensor.
  Real item() const;

  void fill(Real v);
  /// this += other (shapes must match).
  void add_(const Tensor& other);
  /// Same data reinterpreted under a shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  Shape shape_{0, 0, 0, 0, 0};
  std::vector<Real> data_;
};

/// Throws ConfigError unless every dimension is >= 1.
void require_valid_shape(const Shape& s, const std::string& what);

}  // namespace gfn::inline GFN_ABI
