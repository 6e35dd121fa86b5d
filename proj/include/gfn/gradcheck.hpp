#pragma once

// Central finite-difference oracle for the tape's reverse-mode gradients.

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "gfn/autodiff.hpp"

namespace gfn::inline GFN_ABI {

struct GradCheckOptions {
  /// Coordinates checked per tensor; 0 checks every coordinate. Values below
  /// 32 are raised to 32.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_location;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// |a-b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

/// Scalar-valued differentiable map of one tensor.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Compares backprop of f at x against (f(x+he)-f(x-he))/2h per coordinate.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double step,
                           const GradCheckOptions& options = {});

/// Same check with respect to parameters that f reads from the tape. The
/// parameters are perturbed in place and restored afterwards.
using LossFn = std::function<Var(Tape&)>;
GradCheckResult grad_check_params(const LossFn& f,
                                  std::span<Parameter* const> params,
                                  double step,
                                  const GradCheckOptions& options = {});

}  // namespace gfn::inline GFN_ABI
