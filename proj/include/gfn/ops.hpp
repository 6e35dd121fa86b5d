#pragma once

// Differentiable operations recorded on a Tape. Every op returns a new node
// and leaves its inputs untouched; batchnorm in train mode additionally
// updates the running statistics held in its BatchNormState.

#include <cmath>
#include <optional>
#include <span>
#include <string>

#include "gfn/autodiff.hpp"
#include "gfn/kernels.hpp"

namespace gfn::inline GFN_ABI {

enum class NormMode { train, eval };

struct BatchNormState {
  Parameter gamma;  // (1,C,1,1,1)
  Parameter beta;   // (1,C,1,1,1)
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  NormMode mode = NormMode::train;

  BatchNormState() = default;
  BatchNormState(const std::string& prefix, int channels);
  int channels() const { return gamma.value.shape().c; }
};

/// log(1 + exp(v)) without overflow.
double softplus(double v);

Var conv3d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec);

Var elu(Var x);
Var sigmoid(Var x);
Var relu(Var x);

Var batchnorm(Var x, BatchNormState& state);

Var maxpool3d_2(Var x);

/// Mean over (d,h,w): (n,c,d,h,w) -> (n,c,1,1,1).
Var global_avg_pool(Var x);
/// Max over (d,h,w), first voxel wins ties.
Var global_max_pool(Var x);
/// Mean over channels: (n,c,d,h,w) -> (n,1,d,h,w).
Var channel_mean(Var x);
/// Max over channels, first channel wins ties.
Var channel_max(Var x);

/// x: (n,f,1,1,1), weight: (o,f,1,1,1), bias: (1,o,1,1,1) -> (n,o,1,1,1).
Var linear(Var x, Var weight, std::optional<Var> bias);

Var concat_channels(std::span<const Var> xs);
Var slice_channels(Var x, int begin, int count);

// Elementwise binary ops. A size-1 axis of either operand broadcasts against
// the other operand's extent on that axis.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var x, double c);
Var scale(Var x, double c);

/// Sum of all elements -> (1,1,1,1,1).
Var sum(Var x);
Var mean(Var x);

/// Softmax across the channel axis at every (n,d,h,w).
Var softmax_channels(Var x);

/// Numerically stable logistic function.
inline double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace gfn::inline GFN_ABI
