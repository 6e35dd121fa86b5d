#include "gfn/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace gfn::inline GFN_ABI {

int Shape::dim(int axis) const {
  switch (axis) {
    case 0: return n;
    case 1: return c;
    case 2: return d;
    case 3: return h;
    case 4: return w;
    default: throw ConfigError("shape axis out of range: " + std::to_string(axis));
  }
}

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.d) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

void require_valid_shape(const Shape& s, const std::string& what) {
  static constexpr const char* kAxis[] = {"batch", "channel", "depth", "height",
                                          "width"};
  const auto dims = s.dims();
  for (int i = 0; i < 5; ++i) {
    if (dims[i] < 1) {
      throw ConfigError(what + ": " + kAxis[i] + " extent must be >= 1, got " +
                        std::to_string(dims[i]));
    }
  }
}

Tensor::Tensor(Shape shape, Real fill) : shape_(shape) {
  require_valid_shape(shape, "tensor");
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<Real> data)
    : shape_(shape), data_(std::move(data)) {
  require_valid_shape(shape, "tensor");
  if (data_.size() != shape.numel()) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + to_string(shape));
  }
}

Real Tensor::item() const {
  if (data_.size() != 1) {
    throw ConfigError("item() on tensor of shape " + to_string(shape_));
  }
  return data_[0];
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ConfigError("add_: shape " + to_string(other.shape_) +
                      " does not match " + to_string(shape_));
  }
  const Real* src = other.data_.data();
  Real* dst = data_.data();
  const std::size_t n = data_.size();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw ConfigError("cannot reshape " + to_string(shape_) + " to " +
                      to_string(shape));
  }
  return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

}  // namespace gfn::inline GFN_ABI
