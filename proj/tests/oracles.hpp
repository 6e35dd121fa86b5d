#pragma once

// Independent reference implementations used only by tests. None of these
// share code paths with the library implementations they check.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gfn/kernels.hpp"
#include "gfn/tensor.hpp"

// The precision tag keeps 32- and 64-bit copies apart when one binary links both.
namespace oracle {
inline namespace GFN_ABI {

using gfn::ConvSpec;
using gfn::Real;
using gfn::Shape;
using gfn::Tensor;

/// Direct per-output-voxel evaluation of a grouped, strided, dilated,
/// zero-padded 3D cross-correlation.
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* bias,
                     const ConvSpec& s) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int cin_g = xs.c / s.groups;
  const int cout_g = ws.n / s.groups;
  auto out_dim = [](int in, int k, int st, int dl, int p) {
    return (in + 2 * p - dl * (k - 1) - 1) / st + 1;
  };
  const Shape ys{xs.n, ws.n, out_dim(xs.d, ws.d, s.stride[0], s.dilation[0], s.padding[0]),
                 out_dim(xs.h, ws.h, s.stride[1], s.dilation[1], s.padding[1]),
                 out_dim(xs.w, ws.w, s.stride[2], s.dilation[2], s.padding[2])};
  Tensor y(ys);
  for (int n = 0; n < ys.n; ++n)
    for (int oc = 0; oc < ys.c; ++oc)
      for (int od = 0; od < ys.d; ++od)
        for (int oh = 0; oh < ys.h; ++oh)
          for (int ow = 0; ow < ys.w; ++ow) {
            double acc = bias ? (*bias)[oc] : 0.0;
            const int g = oc / cout_g;
            for (int icl = 0; icl < cin_g; ++icl)
              for (int kd = 0; kd < ws.d; ++kd)
                for (int kh = 0; kh < ws.h; ++kh)
                  for (int kw = 0; kw < ws.w; ++kw) {
                    const int id = od * s.stride[0] - s.padding[0] + kd * s.dilation[0];
                    const int ih = oh * s.stride[1] - s.padding[1] + kh * s.dilation[1];
                    const int iw = ow * s.stride[2] - s.padding[2] + kw * s.dilation[2];
                    if (id < 0 || ih < 0 || iw < 0 || id >= xs.d || ih >= xs.h || iw >= xs.w)
                      continue;
                    acc += static_cast<double>(x.at(n, g * cin_g + icl, id, ih, iw)) *
                           w.at(oc, icl, kd, kh, kw);
                  }
            y.at(n, oc, od, oh, ow) = static_cast<Real>(acc);
          }
  return y;
}

/// Binary cross-entropy with natural log, computed from the probability.
inline double bce(double logit, int label) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

/// Probability that a random positive outscores a random negative, ties 0.5.
inline double concordance(const std::vector<double>& scores,
                          const std::vector<int>& labels) {
  double num = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) num += 1.0;
      else if (scores[i] == scores[j]) num += 0.5;
    }
  }
  return num / pairs;
}

/// Uniform values rounded to float, so 32- and 64-bit builds see identical
/// inputs for the same seed.
inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<Real>(static_cast<float>(u(rng)));
  }
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return m;
}

}  // namespace GFN_ABI
}  // namespace oracle
