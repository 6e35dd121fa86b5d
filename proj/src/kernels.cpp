#include "gfn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>
#include <string>

namespace gfn::inline GFN_ABI {

namespace {

constexpr const char* kSpatialAxis[] = {"depth", "height", "width"};

// Output positions o in [lo, hi) whose input coordinate o*stride + off lies
// inside [0, extent).
struct Range {
  int lo;
  int hi;
};

Range valid_range(int out_extent, int in_extent, int stride, int off) {
  int lo = 0;
  if (off < 0) lo = (-off + stride - 1) / stride;
  const int last = in_extent - 1 - off;
  int hi = last < 0 ? 0 : last / stride + 1;
  hi = std::min(hi, out_extent);
  return {lo, std::max(lo, hi)};
}

inline void row_axpy(Real* __restrict y, const Real* __restrict x, Real a,
                     int off, int stride, Range r) {
  if (stride == 1) {
    const Real* xs = x + off;
    for (int o = r.lo; o < r.hi; ++o) y[o] += a * xs[o];
  } else {
    for (int o = r.lo; o < r.hi; ++o) y[o] += a * x[o * stride + off];
  }
}

inline void row_scatter(Real* __restrict gx, const Real* __restrict gy, Real a,
                        int off, int stride, Range r) {
  if (stride == 1) {
    Real* gs = gx + off;
    for (int o = r.lo; o < r.hi; ++o) gs[o] += a * gy[o];
  } else {
    for (int o = r.lo; o < r.hi; ++o) gx[o * stride + off] += a * gy[o];
  }
}

// Double lanes: weight gradients are long sums with heavy cancellation.
inline double row_dot(const Real* __restrict gy, const Real* __restrict x,
                      int off, int stride, Range r) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int o = r.lo;
  if (stride == 1) {
    const Real* xs = x + off;
    for (; o + 8 <= r.hi; o += 8) {
      for (int k = 0; k < 8; ++k) acc[k] += static_cast<double>(gy[o + k]) * xs[o + k];
    }
    for (; o < r.hi; ++o) acc[0] += static_cast<double>(gy[o]) * xs[o];
  } else {
    for (; o < r.hi; ++o) acc[0] += static_cast<double>(gy[o]) * x[o * stride + off];
  }
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

struct ConvGeometry {
  int n, cin, cout, groups, cin_g, cout_g;
  int id, ih, iw;
  int od, oh, ow;
  int kd, kh, kw;
  ConvSpec spec;
};

ConvGeometry geometry(const Shape& x, const Shape& w, const Shape& y,
                      const ConvSpec& spec) {
  return ConvGeometry{x.n, x.c, w.n, spec.groups, x.c / spec.groups,
                      w.n / spec.groups, x.d, x.h, x.w, y.d, y.h, y.w,
                      w.d, w.h, w.w, spec};
}

}  // namespace

Shape conv3d_output_shape(const Shape& x, const Shape& weight,
                          const ConvSpec& spec) {
  require_valid_shape(x, "conv3d input");
  require_valid_shape(weight, "conv3d weight");
  if (spec.groups < 1) {
    throw ConfigError("conv3d: groups must be positive, got " +
                      std::to_string(spec.groups));
  }
  if (x.c % spec.groups != 0) {
    throw ConfigError("conv3d: channel axis: input channels " +
                      std::to_string(x.c) + " not divisible by groups " +
                      std::to_string(spec.groups));
  }
  if (weight.n % spec.groups != 0) {
    throw ConfigError("conv3d: channel axis: output channels " +
                      std::to_string(weight.n) + " not divisible by groups " +
                      std::to_string(spec.groups));
  }
  if (weight.c * spec.groups != x.c) {
    throw ConfigError("conv3d: channel axis: weight expects " +
                      std::to_string(weight.c * spec.groups) +
                      " input channels, got " + std::to_string(x.c));
  }
  const std::array<int, 3> in{x.d, x.h, x.w};
  const std::array<int, 3> k{weight.d, weight.h, weight.w};
  if (k != spec.kernel) {
    throw ConfigError("conv3d: weight kernel extent does not match spec");
  }
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (spec.stride[a] < 1 || spec.dilation[a] < 1 || spec.padding[a] < 0) {
      throw ConfigError(std::string("conv3d: ") + kSpatialAxis[a] +
                        " axis: stride/dilation must be >= 1 and padding >= 0");
    }
    const int span = in[a] + 2 * spec.padding[a] -
                     spec.dilation[a] * (k[a] - 1) - 1;
    if (span < 0) {
      throw ConfigError(std::string("conv3d: ") + kSpatialAxis[a] +
                        " axis: output size < 1 (input " +
                        std::to_string(in[a]) + ")");
    }
    out[a] = span / spec.stride[a] + 1;
  }
  return Shape{x.n, weight.n, out[0], out[1], out[2]};
}

namespace kernels {

namespace {

// Row path: any stride. Loops over output rows with clipped ranges.
void forward_rows(const Tensor& x, const Tensor& weight, const Tensor* bias,
                  const ConvSpec& spec, Tensor& y) {
  const Shape ys = y.shape();
  const ConvGeometry g = geometry(x.shape(), weight.shape(), ys, spec);
  const std::size_t in_vol = static_cast<std::size_t>(g.id) * g.ih * g.iw;
  const std::size_t out_vol = static_cast<std::size_t>(g.od) * g.oh * g.ow;
  const int ktaps = g.kd * g.kh * g.kw;

  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.cout; ++oc) {
      Real* yv = y.ptr() + (static_cast<std::size_t>(n) * g.cout + oc) * out_vol;
      if (bias != nullptr) std::fill(yv, yv + out_vol, (*bias)[oc]);
      const int grp = oc / g.cout_g;
      for (int icl = 0; icl < g.cin_g; ++icl) {
        const int ic = grp * g.cin_g + icl;
        const Real* xv =
            x.ptr() + (static_cast<std::size_t>(n) * g.cin + ic) * in_vol;
        const Real* wk =
            weight.ptr() + (static_cast<std::size_t>(oc) * g.cin_g + icl) * ktaps;
        for (int kd = 0; kd < g.kd; ++kd) {
          const int offd = kd * spec.dilation[0] - spec.padding[0];
          const Range rd = valid_range(g.od, g.id, spec.stride[0], offd);
          for (int kh = 0; kh < g.kh; ++kh) {
            const int offh = kh * spec.dilation[1] - spec.padding[1];
            const Range rh = valid_range(g.oh, g.ih, spec.stride[1], offh);
            for (int kw = 0; kw < g.kw; ++kw) {
              const Real wv = wk[(kd * g.kh + kh) * g.kw + kw];
              const int offw = kw * spec.dilation[2] - spec.padding[2];
              const Range rw = valid_range(g.ow, g.iw, spec.stride[2], offw);
              if (rw.lo >= rw.hi) continue;
              for (int od = rd.lo; od < rd.hi; ++od) {
                const int id = od * spec.stride[0] + offd;
                for (int oh = rh.lo; oh < rh.hi; ++oh) {
                  const int ih = oh * spec.stride[1] + offh;
                  row_axpy(yv + (static_cast<std::size_t>(od) * g.oh + oh) * g.ow,
                           xv + (static_cast<std::size_t>(id) * g.ih + ih) * g.iw,
                           wv, offw, spec.stride[2], rw);
                }
              }
            }
          }
        }
      }
    }
  }
}

void backward_input_rows(const Tensor& grad_out, const Tensor& weight,
                         const ConvSpec& spec, Tensor& gx) {
  const ConvGeometry g =
      geometry(gx.shape(), weight.shape(), grad_out.shape(), spec);
  const std::size_t in_vol = static_cast<std::size_t>(g.id) * g.ih * g.iw;
  const std::size_t out_vol = static_cast<std::size_t>(g.od) * g.oh * g.ow;
  const int ktaps = g.kd * g.kh * g.kw;

  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.cout; ++oc) {
      const Real* gyv =
          grad_out.ptr() + (static_cast<std::size_t>(n) * g.cout + oc) * out_vol;
      const int grp = oc / g.cout_g;
      for (int icl = 0; icl < g.cin_g; ++icl) {
        const int ic = grp * g.cin_g + icl;
        Real* gxv = gx.ptr() + (static_cast<std::size_t>(n) * g.cin + ic) * in_vol;
        const Real* wk =
            weight.ptr() + (static_cast<std::size_t>(oc) * g.cin_g + icl) * ktaps;
        for (int kd = 0; kd < g.kd; ++kd) {
          const int offd = kd * spec.dilation[0] - spec.padding[0];
          const Range rd = valid_range(g.od, g.id, spec.stride[0], offd);
          for (int kh = 0; kh < g.kh; ++kh) {
            const int offh = kh * spec.dilation[1] - spec.padding[1];
            const Range rh = valid_range(g.oh, g.ih, spec.stride[1], offh);
            for (int kw = 0; kw < g.kw; ++kw) {
              const Real wv = wk[(kd * g.kh + kh) * g.kw + kw];
              const int offw = kw * spec.dilation[2] - spec.padding[2];
              const Range rw = valid_range(g.ow, g.iw, spec.stride[2], offw);
              if (rw.lo >= rw.hi) continue;
              for (int od = rd.lo; od < rd.hi; ++od) {
                const int id = od * spec.stride[0] + offd;
                for (int oh = rh.lo; oh < rh.hi; ++oh) {
                  const int ih = oh * spec.stride[1] + offh;
                  row_scatter(
                      gxv + (static_cast<std::size_t>(id) * g.ih + ih) * g.iw,
                      gyv + (static_cast<std::size_t>(od) * g.oh + oh) * g.ow, wv,
                      offw, spec.stride[2], rw);
                }
              }
            }
          }
        }
      }
    }
  }
}

void backward_weight_rows(const Tensor& grad_out, const Tensor& x,
                          const ConvSpec& spec, std::vector<double>& acc,
                          const Shape& w_shape) {
  const ConvGeometry g = geometry(x.shape(), w_shape, grad_out.shape(), spec);
  const std::size_t in_vol = static_cast<std::size_t>(g.id) * g.ih * g.iw;
  const std::size_t out_vol = static_cast<std::size_t>(g.od) * g.oh * g.ow;
  const int ktaps = g.kd * g.kh * g.kw;

  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.cout; ++oc) {
      const Real* gyv =
          grad_out.ptr() + (static_cast<std::size_t>(n) * g.cout + oc) * out_vol;
      const int grp = oc / g.cout_g;
      for (int icl = 0; icl < g.cin_g; ++icl) {
        const int ic = grp * g.cin_g + icl;
        const Real* xv =
            x.ptr() + (static_cast<std::size_t>(n) * g.cin + ic) * in_vol;
        double* ak = acc.data() + (static_cast<std::size_t>(oc) * g.cin_g + icl) * ktaps;
        for (int kd = 0; kd < g.kd; ++kd) {
          const int offd = kd * spec.dilation[0] - spec.padding[0];
          const Range rd = valid_range(g.od, g.id, spec.stride[0], offd);
          for (int kh = 0; kh < g.kh; ++kh) {
            const int offh = kh * spec.dilation[1] - spec.padding[1];
            const Range rh = valid_range(g.oh, g.ih, spec.stride[1], offh);
            for (int kw = 0; kw < g.kw; ++kw) {
              const int offw = kw * spec.dilation[2] - spec.padding[2];
              const Range rw = valid_range(g.ow, g.iw, spec.stride[2], offw);
              if (rw.lo >= rw.hi) continue;
              double sum = 0.0;
              for (int od = rd.lo; od < rd.hi; ++od) {
                const int id = od * spec.stride[0] + offd;
                for (int oh = rh.lo; oh < rh.hi; ++oh) {
                  const int ih = oh * spec.stride[1] + offh;
                  sum += row_dot(
                      gyv + (static_cast<std::size_t>(od) * g.oh + oh) * g.ow,
                      xv + (static_cast<std::size_t>(id) * g.ih + ih) * g.iw,
                      offw, spec.stride[2], rw);
                }
              }
              ak[(kd * g.kh + kh) * g.kw + kw] += sum;
            }
          }
        }
      }
    }
  }
}

// Padded path (unit stride on every axis). The input is copied into a
// zero-padded volume; the output is computed in a "wide" layout that shares
// the padded row and plane pitch, so every kernel tap is one contiguous
// multiply-add over the whole volume. Columns and rows of the wide buffer
// past the real output extent are scratch and dropped (forward) or kept at
// zero (backward).
struct Padded {
  int dp, hp, wp;
  std::size_t plane, vol;  // padded input
  std::size_t len;         // wide output span
  std::vector<std::size_t> shift;  // per tap, into the padded input

  Padded(const ConvGeometry& g, const ConvSpec& s)
      : dp(g.id + 2 * s.padding[0]),
        hp(g.ih + 2 * s.padding[1]),
        wp(g.iw + 2 * s.padding[2]) {
    plane = static_cast<std::size_t>(hp) * wp;
    vol = plane * dp;
    len = (g.od - 1) * plane + static_cast<std::size_t>(g.oh - 1) * wp + g.ow;
    for (int kd = 0; kd < g.kd; ++kd)
      for (int kh = 0; kh < g.kh; ++kh)
        for (int kw = 0; kw < g.kw; ++kw)
          shift.push_back(kd * s.dilation[0] * plane +
                          static_cast<std::size_t>(kh) * s.dilation[1] * wp +
                          static_cast<std::size_t>(kw) * s.dilation[2]);
  }
  std::size_t wide(int d, int h) const {
    return d * plane + static_cast<std::size_t>(h) * wp;
  }
};

bool unit_stride(const ConvSpec& s) {
  return s.stride[0] == 1 && s.stride[1] == 1 && s.stride[2] == 1;
}

// Copies channel volumes of sample n into the padded buffer (borders stay 0).
template <typename T>
void pad_sample(const Tensor& x, int n, const ConvSpec& s, const Padded& p,
                std::vector<T>& out) {
  const Shape& xs = x.shape();
  out.assign(p.vol * xs.c, T(0));
  for (int c = 0; c < xs.c; ++c) {
    for (int d = 0; d < xs.d; ++d) {
      for (int h = 0; h < xs.h; ++h) {
        const Real* src = x.ptr() + x.offset(n, c, d, h, 0);
        T* dst = out.data() + c * p.vol +
                    p.wide(d + s.padding[0], h + s.padding[1]) + s.padding[2];
        std::copy(src, src + xs.w, dst);
      }
    }
  }
}

// Scatters one output channel into the wide layout (scratch positions 0).
template <typename T>
void to_wide(const Real* src, const Shape& ys, const Padded& p, std::vector<T>& out) {
  out.assign(p.len, T(0));
  for (int d = 0; d < ys.d; ++d) {
    for (int h = 0; h < ys.h; ++h) {
      std::copy(src, src + ys.w, out.data() + p.wide(d, h));
      src += ys.w;
    }
  }
}

// acc[i] += sum_j w[j] * src[j][i]: N source streams per pass, so each
// accumulator load/store is shared by N multiply-adds. Terms are added in j
// order, keeping results independent of blocking.
template <int N>
inline void add_terms(Real* __restrict acc, const Real* const* src, const Real* w,
                      std::size_t len) {
  const Real* q[N];
  Real c[N];
  for (int j = 0; j < N; ++j) {
    q[j] = src[j];
    c[j] = w[j];
  }
#pragma GCC ivdep
  for (std::size_t i = 0; i < len; ++i) {
    Real v = acc[i];
    for (int j = 0; j < N; ++j) v += c[j] * q[j][i];
    acc[i] = v;
  }
}

inline void add_all_terms(Real* acc, const std::vector<const Real*>& src,
                          const std::vector<Real>& w, std::size_t len) {
  std::size_t j = 0;
  const std::size_t n = src.size();
  for (; j + 8 <= n; j += 8) add_terms<8>(acc, src.data() + j, w.data() + j, len);
  for (; j + 4 <= n; j += 4) add_terms<4>(acc, src.data() + j, w.data() + j, len);
  for (; j < n; ++j) add_terms<1>(acc, src.data() + j, w.data() + j, len);
}

// out[j] += sum_i g[i] * src[j][i], N streams sharing each g load. Weight
// gradients are long sums with heavy cancellation, so operands arrive
// already widened to double.
template <int N>
inline void dot_terms(const double* __restrict g, const double* const* src, double* out,
                      std::size_t len) {
  constexpr int L = 4;
  double s[N][L] = {};
  const double* q[N];
  for (int j = 0; j < N; ++j) q[j] = src[j];
  std::size_t i = 0;
  for (; i + L <= len; i += L) {
    for (int j = 0; j < N; ++j) {
      for (int l = 0; l < L; ++l) s[j][l] += g[i + l] * q[j][i + l];
    }
  }
  for (; i < len; ++i) {
    for (int j = 0; j < N; ++j) s[j][0] += g[i] * q[j][i];
  }
  for (int j = 0; j < N; ++j) out[j] += (s[j][0] + s[j][1]) + (s[j][2] + s[j][3]);
}

inline void dot_all_terms(const double* g, const std::vector<const double*>& src,
                          double* out, std::size_t len) {
  std::size_t j = 0;
  const std::size_t n = src.size();
  for (; j + 8 <= n; j += 8) dot_terms<8>(g, src.data() + j, out + j, len);
  for (; j < n; ++j) dot_terms<1>(g, src.data() + j, out + j, len);
}

// Work is done in blocks of the wide index so the accumulator stays in L1
// while all taps and input channels stream through it.
constexpr std::size_t kBlock = 512;

// The hot loops are compiled twice and picked at load time: an AVX2 clone
// and the baseline. A given machine always runs the same clone.
#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define GFN_HOT __attribute__((target_clones("avx2", "default")))
#else
#define GFN_HOT
#endif

GFN_HOT void forward_padded(const Tensor& x, const Tensor& weight, const Tensor* bias,
                    const ConvSpec& spec, Tensor& y) {
  const Shape ys = y.shape();
  const ConvGeometry g = geometry(x.shape(), weight.shape(), ys, spec);
  const Padded p(g, spec);
  const int ktaps = g.kd * g.kh * g.kw;
  std::vector<Real> xp;
  std::vector<Real> yw(p.len);
  std::vector<const Real*> src(static_cast<std::size_t>(g.cin_g) * ktaps);
  std::vector<Real> w(src.size());
  alignas(64) Real acc[kBlock];
  for (int n = 0; n < g.n; ++n) {
    pad_sample(x, n, spec, p, xp);
    for (int oc = 0; oc < g.cout; ++oc) {
      const int grp = oc / g.cout_g;
      const Real b = bias != nullptr ? (*bias)[oc] : Real(0);
      const Real* wk = weight.ptr() + static_cast<std::size_t>(oc) * g.cin_g * ktaps;
      std::copy(wk, wk + w.size(), w.begin());
      for (std::size_t b0 = 0; b0 < p.len; b0 += kBlock) {
        const std::size_t bl = std::min(kBlock, p.len - b0);
        for (int icl = 0; icl < g.cin_g; ++icl) {
          const Real* xv = xp.data() + (grp * g.cin_g + icl) * p.vol + b0;
          for (int k = 0; k < ktaps; ++k) src[icl * ktaps + k] = xv + p.shift[k];
        }
        std::fill(acc, acc + bl, b);
        add_all_terms(acc, src, w, bl);
        std::copy(acc, acc + bl, yw.data() + b0);
      }
      Real* dst = y.ptr() + y.offset(n, oc, 0, 0, 0);
      for (int d = 0; d < ys.d; ++d) {
        for (int h = 0; h < ys.h; ++h) {
          const Real* from = yw.data() + p.wide(d, h);
          dst = std::copy(from, from + ys.w, dst);
        }
      }
    }
  }
}

// Gather form: gx_padded[j] = sum over taps of w * gy_wide[j - shift]. The
// wide gradient buffers carry `front` leading zeros so j - shift never goes
// negative, and zeros past the wide span.
GFN_HOT void backward_input_padded(const Tensor& grad_out, const Tensor& weight,
                           const ConvSpec& spec, Tensor& gx) {
  const Shape& gs = grad_out.shape();
  const ConvGeometry g = geometry(gx.shape(), weight.shape(), gs, spec);
  const Padded p(g, spec);
  const int ktaps = g.kd * g.kh * g.kw;
  const std::size_t front = p.shift.back();
  const std::size_t pitch = front + p.vol;
  std::vector<Real> gw(pitch * g.cout);
  std::vector<Real> wide;
  std::vector<Real> gxp(p.vol);
  std::vector<const Real*> src(static_cast<std::size_t>(g.cout_g) * ktaps);
  std::vector<Real> w(src.size());
  alignas(64) Real acc[kBlock];
  for (int n = 0; n < g.n; ++n) {
    for (int oc = 0; oc < g.cout; ++oc) {
      to_wide(grad_out.ptr() + grad_out.offset(n, oc, 0, 0, 0), gs, p, wide);
      Real* dst = gw.data() + oc * pitch;
      std::fill(dst, dst + pitch, Real(0));
      std::copy(wide.begin(), wide.end(), dst + front);
    }
    for (int ic = 0; ic < g.cin; ++ic) {
      const int grp = ic / g.cin_g;
      const int icl = ic % g.cin_g;
      for (int ocl = 0; ocl < g.cout_g; ++ocl) {
        const int oc = grp * g.cout_g + ocl;
        const Real* wk =
            weight.ptr() + (static_cast<std::size_t>(oc) * g.cin_g + icl) * ktaps;
        std::copy(wk, wk + ktaps, w.begin() + ocl * ktaps);
      }
      for (std::size_t b0 = 0; b0 < p.vol; b0 += kBlock) {
        const std::size_t bl = std::min(kBlock, p.vol - b0);
        for (int ocl = 0; ocl < g.cout_g; ++ocl) {
          const Real* gv = gw.data() + (grp * g.cout_g + ocl) * pitch + front + b0;
          for (int k = 0; k < ktaps; ++k) src[ocl * ktaps + k] = gv - p.shift[k];
        }
        std::fill(acc, acc + bl, Real(0));
        add_all_terms(acc, src, w, bl);
        std::copy(acc, acc + bl, gxp.data() + b0);
      }
      Real* out = gx.ptr() + gx.offset(n, ic, 0, 0, 0);
      for (int d = 0; d < g.id; ++d) {
        for (int h = 0; h < g.ih; ++h) {
          const Real* from =
              gxp.data() + p.wide(d + spec.padding[0], h + spec.padding[1]) + spec.padding[2];
          out = std::copy(from, from + g.iw, out);
        }
      }
    }
  }
}

GFN_HOT void backward_weight_padded(const Tensor& grad_out, const Tensor& x,
                            const ConvSpec& spec, std::vector<double>& acc,
                            const Shape& w_shape) {
  const Shape& gs = grad_out.shape();
  const ConvGeometry g = geometry(x.shape(), w_shape, gs, spec);
  const Padded p(g, spec);
  const int ktaps = g.kd * g.kh * g.kw;
  std::vector<double> xp;
  std::vector<double> gw(p.len * g.cout);
  std::vector<double> wide;
  std::vector<const double*> src(static_cast<std::size_t>(g.cin_g) * ktaps);
  for (int n = 0; n < g.n; ++n) {
    pad_sample(x, n, spec, p, xp);
    for (int oc = 0; oc < g.cout; ++oc) {
      to_wide(grad_out.ptr() + grad_out.offset(n, oc, 0, 0, 0), gs, p, wide);
      std::copy(wide.begin(), wide.end(), gw.data() + oc * p.len);
    }
    for (std::size_t b0 = 0; b0 < p.len; b0 += kBlock) {
      const std::size_t bl = std::min(kBlock, p.len - b0);
      for (int oc = 0; oc < g.cout; ++oc) {
        const double* gv = gw.data() + oc * p.len + b0;
        const int grp = oc / g.cout_g;
        for (int icl = 0; icl < g.cin_g; ++icl) {
          const double* xv = xp.data() + (grp * g.cin_g + icl) * p.vol + b0;
          for (int k = 0; k < ktaps; ++k) src[icl * ktaps + k] = xv + p.shift[k];
        }
        dot_all_terms(gv, src, acc.data() + static_cast<std::size_t>(oc) * g.cin_g * ktaps, bl);
      }
    }
  }
}

}  // namespace

Tensor conv3d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias,
                      const ConvSpec& spec) {
  const Shape ys = conv3d_output_shape(x.shape(), weight.shape(), spec);
  if (bias != nullptr && bias->size() != static_cast<std::size_t>(ys.c)) {
    throw ConfigError("conv3d: bias length " + std::to_string(bias->size()) +
                      " does not match output channels " +
                      std::to_string(ys.c));
  }
  Tensor y(ys);
  if (unit_stride(spec)) {
    forward_padded(x, weight, bias, spec, y);
  } else {
    forward_rows(x, weight, bias, spec, y);
  }
  return y;
}

Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const Shape& x_shape, const ConvSpec& spec) {
  Tensor gx(x_shape);
  if (unit_stride(spec)) {
    backward_input_padded(grad_out, weight, spec, gx);
  } else {
    backward_input_rows(grad_out, weight, spec, gx);
  }
  return gx;
}

void conv3d_backward_weight(const Tensor& grad_out, const Tensor& x,
                            const ConvSpec& spec, Tensor& grad_weight) {
  std::vector<double> acc(grad_weight.size(), 0.0);
  if (unit_stride(spec)) {
    backward_weight_padded(grad_out, x, spec, acc, grad_weight.shape());
  } else {
    backward_weight_rows(grad_out, x, spec, acc, grad_weight.shape());
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    grad_weight[i] += static_cast<Real>(acc[i]);
  }
}

void conv3d_backward_bias(const Tensor& grad_out, Tensor& grad_bias) {
  const Shape& s = grad_out.shape();
  const std::size_t vol = s.spatial();
  for (int c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const Real* p = grad_out.ptr() + (static_cast<std::size_t>(n) * s.c + c) * vol;
      for (std::size_t i = 0; i < vol; ++i) sum += p[i];
    }
    grad_bias[c] += static_cast<Real>(sum);
  }
}

Tensor maxpool3d_2_forward(const Tensor& x, std::vector<std::int64_t>& argmax) {
  const Shape& s = x.shape();
  const std::array<int, 3> in{s.d, s.h, s.w};
  for (int a = 0; a < 3; ++a) {
    if (in[a] % 2 != 0) {
      throw ConfigError(std::string("maxpool3d_2: ") + kSpatialAxis[a] +
                        " extent " + std::to_string(in[a]) + " is odd");
    }
  }
  const Shape os{s.n, s.c, s.d / 2, s.h / 2, s.w / 2};
  Tensor y(os);
  argmax.assign(os.numel(), 0);
  std::size_t out = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int d = 0; d < os.d; ++d) {
        for (int h = 0; h < os.h; ++h) {
          for (int w = 0; w < os.w; ++w, ++out) {
            std::size_t best = x.offset(n, c, 2 * d, 2 * h, 2 * w);
            Real best_v = x[best];
            for (int dz = 0; dz < 2; ++dz) {
              for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                  const std::size_t o =
                      x.offset(n, c, 2 * d + dz, 2 * h + dy, 2 * w + dx);
                  if (x[o] > best_v) {
                    best_v = x[o];
                    best = o;
                  }
                }
              }
            }
            y[out] = best_v;
            argmax[out] = static_cast<std::int64_t>(best);
          }
        }
      }
    }
  }
  return y;
}

Tensor maxpool3d_2_backward(const Tensor& grad_out,
                            const std::vector<std::int64_t>& argmax,
                            const Shape& x_shape) {
  Tensor gx(x_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    gx[static_cast<std::size_t>(argmax[i])] += grad_out[i];
  }
  return gx;
}

namespace {

struct Lerp {
  int i0;
  int i1;
  double t;
};

std::vector<Lerp> lerp_table(int in, int out) {
  std::vector<Lerp> table(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    table[o] = {i0, i1, src - i0};
  }
  return table;
}

}  // namespace

Tensor trilinear_resize(const Tensor& x, int d, int h, int w) {
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, d, h, w};
  require_valid_shape(os, "trilinear_resize");
  const auto td = lerp_table(s.d, d);
  const auto th = lerp_table(s.h, h);
  const auto tw = lerp_table(s.w, w);
  Tensor y(os);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int z = 0; z < d; ++z) {
        for (int yy = 0; yy < h; ++yy) {
          for (int xx = 0; xx < w; ++xx) {
            const Lerp& a = td[z];
            const Lerp& b = th[yy];
            const Lerp& e = tw[xx];
            auto v = [&](int i, int j, int k) -> double {
              return x.at(n, c, i, j, k);
            };
            const double c00 = v(a.i0, b.i0, e.i0) * (1 - e.t) + v(a.i0, b.i0, e.i1) * e.t;
            const double c01 = v(a.i0, b.i1, e.i0) * (1 - e.t) + v(a.i0, b.i1, e.i1) * e.t;
            const double c10 = v(a.i1, b.i0, e.i0) * (1 - e.t) + v(a.i1, b.i0, e.i1) * e.t;
            const double c11 = v(a.i1, b.i1, e.i0) * (1 - e.t) + v(a.i1, b.i1, e.i1) * e.t;
            const double c0 = c00 * (1 - b.t) + c01 * b.t;
            const double c1 = c10 * (1 - b.t) + c11 * b.t;
            y.at(n, c, z, yy, xx) = static_cast<Real>(c0 * (1 - a.t) + c1 * a.t);
          }
        }
      }
    }
  }
  return y;
}

}  // namespace kernels
}  // namespace gfn::inline GFN_ABI
