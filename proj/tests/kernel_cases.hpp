#pragma once

// Differentiable-kernel cases shared by the 64-bit finite-difference suite and
// the 32-bit suite (which compares against 64-bit central differences).
// Included from TUs of either precision; everything lives in the active
// precision namespace.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gfn/gradcheck.hpp"
#include "gfn/ops.hpp"
#include "oracles.hpp"

namespace gfn::inline GFN_ABI::cases {

enum class Smoothness { piecewise_linear, kinked, smooth };

struct KernelCase {
  std::string name;
  Shape shape;
  double lo = -1;
  double hi = 1;
  Smoothness kind = Smoothness::piecewise_linear;
  std::function<Var(Tape&, Var)> op;
  double step = 0;  // 0: derived from kind
};

inline const Shape kShape{2, 3, 4, 4, 4};

/// Central-difference step for the 64-bit reference: polynomial kernels have
/// no truncation error, max/relu kernels need steps that do not cross a kink.
inline double reference_step(const KernelCase& c) {
  if (c.step > 0) return c.step;
  switch (c.kind) {
    case Smoothness::piecewise_linear: return 1e-3;
    case Smoothness::kinked: return 1e-6;
    case Smoothness::smooth: return 1e-5;
  }
  return 1e-5;
}

inline Tensor case_input(const KernelCase& c, std::uint64_t seed) {
  return oracle::random_tensor(c.shape, 1000 + seed, c.lo, c.hi);
}

/// Loss = sum(r * (op(x) - op(x0))) with fixed positive random weights r and
/// x0 the case input. Subtracting the constant baseline leaves the gradient
/// unchanged but keeps the loss near zero, so central differences are not
/// swamped by the rounding unit of a large loss value.
inline ScalarFn case_loss(const KernelCase& c, std::uint64_t seed) {
  auto op = c.op;
  Tensor baseline;
  {
    Tape t;
    baseline = op(t, t.constant(case_input(c, seed))).value();
  }
  return [op, seed, baseline](Tape& t, Var x) {
    Var y = sub(op(t, x), t.constant(baseline));
    return sum(mul(y, t.constant(oracle::random_tensor(y.shape(), seed + 999, 0.5, 1.5))));
  };
}

inline std::vector<KernelCase> kernel_cases() {
  using S = Smoothness;
  std::vector<KernelCase> out;
  const ConvSpec specs[] = {ConvSpec::cube(3, 1), ConvSpec::cube(3, 2, 1, 2),
                            ConvSpec::cube(3, 1, 2), ConvSpec::cube(1, 0)};
  const char* spec_names[] = {"k3", "k3-dil2", "k3-stride2", "k1"};
  for (int k = 0; k < 4; ++k) {
    const ConvSpec spec = specs[k];
    const Tensor w = oracle::random_tensor(
        {4, 3, spec.kernel[0], spec.kernel[1], spec.kernel[2]}, 50 + k);
    const Tensor b = oracle::random_tensor({1, 4, 1, 1, 1}, 60 + k);
    const Tensor x = oracle::random_tensor(kShape, 77);
    const std::string tag = spec_names[k];
    out.push_back({"conv3d/input/" + tag, kShape, -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return conv3d(v, t.constant(w), t.constant(b), spec); }});
    out.push_back({"conv3d/weight/" + tag, w.shape(), -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return conv3d(t.constant(x), v, t.constant(b), spec); }});
    out.push_back({"conv3d/bias/" + tag, b.shape(), -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return conv3d(t.constant(x), t.constant(w), v, spec); }});
  }
  {
    const Tensor wg = oracle::random_tensor({4, 3, 3, 3, 3}, 90);
    out.push_back({"conv3d/grouped", {2, 6, 4, 4, 4}, -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) {
                     return conv3d(v, t.constant(wg), std::nullopt, ConvSpec::cube(3, 1, 1, 1, 2));
                   }});
  }
  out.push_back({"elu", kShape, -3, 3, S::smooth, [](Tape&, Var v) { return elu(v); }});
  out.push_back({"sigmoid", kShape, -4, 4, S::smooth, [](Tape&, Var v) { return sigmoid(v); }});
  out.push_back({"relu", kShape, -1, 1, S::kinked, [](Tape&, Var v) { return relu(v); }});
  {
    auto bn = std::make_shared<BatchNormState>("bn", 3);
    for (int c = 0; c < 3; ++c) {
      bn->gamma.value[c] = static_cast<Real>(0.7 + 0.3 * c);
      bn->beta.value[c] = static_cast<Real>(0.1 * c);
    }
    out.push_back({"batchnorm/train", kShape, -1, 1, S::smooth,
                   [bn](Tape&, Var v) { return batchnorm(v, *bn); }});
    auto bn_eval = std::make_shared<BatchNormState>(*bn);
    bn_eval->mode = NormMode::eval;
    bn_eval->running_mean.fill(Real(0.2));
    bn_eval->running_var.fill(Real(1.5));
    out.push_back({"batchnorm/eval", kShape, -1, 1, S::piecewise_linear,
                   [bn_eval](Tape&, Var v) { return batchnorm(v, *bn_eval); }});
  }
  out.push_back({"maxpool3d_2", kShape, -1, 1, S::kinked, [](Tape&, Var v) { return maxpool3d_2(v); }});
  out.push_back({"global_avg_pool", kShape, -1, 1, S::piecewise_linear,
                 [](Tape&, Var v) { return global_avg_pool(v); }});
  out.push_back({"global_max_pool", kShape, -1, 1, S::kinked,
                 [](Tape&, Var v) { return global_max_pool(v); }});
  out.push_back({"channel_mean", kShape, -1, 1, S::piecewise_linear,
                 [](Tape&, Var v) { return channel_mean(v); }});
  out.push_back({"channel_max", kShape, -1, 1, S::kinked, [](Tape&, Var v) { return channel_max(v); }});
  {
    const Tensor w = oracle::random_tensor({5, 3, 1, 1, 1}, 7);
    const Tensor b = oracle::random_tensor({1, 5, 1, 1, 1}, 8);
    const Tensor x = oracle::random_tensor({4, 3, 1, 1, 1}, 9);
    out.push_back({"linear/input", {4, 3, 1, 1, 1}, -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return linear(v, t.constant(w), t.constant(b)); }});
    out.push_back({"linear/weight", w.shape(), -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return linear(t.constant(x), v, t.constant(b)); }});
    out.push_back({"linear/bias", b.shape(), -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return linear(t.constant(x), t.constant(w), v); }});
  }
  {
    const Tensor other = oracle::random_tensor(kShape, 4);
    out.push_back({"concat_channels", kShape, -1, 1, S::piecewise_linear, [=](Tape& t, Var v) {
                     Var parts[] = {v, t.constant(other), v};
                     return concat_channels(parts);
                   }});
  }
  out.push_back({"slice_channels", kShape, -1, 1, S::piecewise_linear,
                 [](Tape&, Var v) { return slice_channels(v, 1, 2); }});
  {
    const Tensor per_channel = oracle::random_tensor({1, 3, 1, 1, 1}, 21, 0.5, 2);
    const Tensor per_voxel = oracle::random_tensor({2, 1, 4, 4, 4}, 22, 0.5, 2);
    const Tensor full = oracle::random_tensor(kShape, 23, 0.5, 2);
    out.push_back({"add/broadcast", kShape, -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return add(v, t.constant(per_channel)); }});
    out.push_back({"sub/broadcast", kShape, -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return sub(t.constant(per_voxel), v); }});
    out.push_back({"mul/full", kShape, -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return mul(v, t.constant(full)); }});
    out.push_back({"mul/square", kShape, -1, 1, S::piecewise_linear,
                   [](Tape&, Var v) { return mul(v, v); }});
    out.push_back({"mul/channel-operand", per_channel.shape(), -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return mul(t.constant(full), v); }});
    out.push_back({"mul/voxel-operand", per_voxel.shape(), -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return mul(v, t.constant(full)); }});
    out.push_back({"div/numerator", kShape, -1, 1, S::piecewise_linear,
                   [=](Tape& t, Var v) { return div(v, t.constant(full)); }});
    out.push_back({"div/denominator", kShape, -1, 1, S::smooth,
                   [=](Tape& t, Var v) { return div(t.constant(full), add_scalar(v, 3.0)); }});
  }
  out.push_back({"scale+add_scalar", kShape, -1, 1, S::piecewise_linear,
                 [](Tape&, Var v) { return add_scalar(scale(v, -2.5), 1.0); }});
  out.push_back({"mean", kShape, -1, 1, S::piecewise_linear, [](Tape&, Var v) { return mean(v); }});
  // Rounding in exp/normalise and third-derivative truncation balance near 5e-6.
  out.push_back({"softmax_channels", kShape, -2, 2, S::smooth,
                 [](Tape&, Var v) { return softmax_channels(v); }, 5e-6});
  return out;
}

}  // namespace gfn::inline GFN_ABI::cases
