#pragma once

// Raw forward/backward kernels for 3D convolution and pooling. These operate
// on plain tensors; the differentiable wrappers in ops.hpp record them on a
// tape. All loops run serially in a fixed order, so results are bit-identical
// for identical inputs.

#include <array>
#include <cstdint>
#include <vector>

#include "gfn/tensor.hpp"

namespace gfn::inline GFN_ABI {

struct ConvSpec {
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> dilation{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};  // symmetric, per axis
  int groups = 1;

  /// Cubic kernel with the same stride/dilation/padding on every axis.
  static ConvSpec cube(int k, int pad, int stride = 1, int dilation = 1,
                       int groups = 1) {
    return ConvSpec{{k, k, k},
                    {stride, stride, stride},
                    {dilation, dilation, dilation},
                    {pad, pad, pad},
                    groups};
  }
};

/// Validates channel/group consistency and returns the output shape.
/// Throws ConfigError naming the offending axis.
Shape conv3d_output_shape(const Shape& x, const Shape& weight,
                          const ConvSpec& spec);

namespace kernels {

Tensor conv3d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias,
                      const ConvSpec& spec);

/// Gradient with respect to the convolution input.
Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const Shape& x_shape, const ConvSpec& spec);

/// Accumulates the weight gradient into grad_weight.
void conv3d_backward_weight(const Tensor& grad_out, const Tensor& x,
                            const ConvSpec& spec, Tensor& grad_weight);

/// Accumulates the per-channel bias gradient into grad_bias (1,C,1,1,1).
void conv3d_backward_bias(const Tensor& grad_out, Tensor& grad_bias);

/// Non-overlapping 2x2x2 max pooling. argmax receives, per output voxel, the
/// flat input offset of the winning voxel (first in (d,h,w) order on ties).
Tensor maxpool3d_2_forward(const Tensor& x, std::vector<std::int64_t>& argmax);

Tensor maxpool3d_2_backward(const Tensor& grad_out,
                            const std::vector<std::int64_t>& argmax,
                            const Shape& x_shape);

/// Trilinear resize with half-voxel alignment (edge voxels clamp).
Tensor trilinear_resize(const Tensor& x, int d, int h, int w);

}  // namespace kernels
}  // namespace gfn::inline GFN_ABI
