#include "gfn/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

namespace gfn::inline GFN_ABI {

namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw ConfigError("operation on an invalid Var");
  return *v.tape;
}

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ConfigError("operands recorded on different tapes");
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor y(x.shape());
  const Real* src = x.ptr();
  Real* dst = y.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(src[i]);
  return y;
}

// ---- broadcasting --------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const auto da = a.dims();
  const auto db = b.dims();
  std::array<int, 5> out{};
  for (int i = 0; i < 5; ++i) {
    if (da[i] == db[i] || db[i] == 1) {
      out[i] = da[i];
    } else if (da[i] == 1) {
      out[i] = db[i];
    } else {
      throw ConfigError(std::string(op) + ": cannot broadcast " + to_string(a) +
                        " with " + to_string(b) + " on axis " +
                        std::to_string(i));
    }
  }
  return Shape{out[0], out[1], out[2], out[3], out[4]};
}

std::array<std::size_t, 5> broadcast_strides(const Shape& s, const Shape& out) {
  const auto d = s.dims();
  const auto o = out.dims();
  std::array<std::size_t, 5> stride{};
  std::size_t acc = 1;
  for (int i = 4; i >= 0; --i) {
    stride[i] = (d[i] == 1 && o[i] != 1) ? 0 : acc;
    acc *= static_cast<std::size_t>(d[i]);
  }
  return stride;
}

// Calls f(out_index, a_index, b_index) over the broadcast output in row-major
// order.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F f) {
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::size_t o = 0;
  for (int i0 = 0; i0 < out.n; ++i0) {
    for (int i1 = 0; i1 < out.c; ++i1) {
      for (int i2 = 0; i2 < out.d; ++i2) {
        for (int i3 = 0; i3 < out.h; ++i3) {
          std::size_t ia = i0 * sa[0] + i1 * sa[1] + i2 * sa[2] + i3 * sa[3];
          std::size_t ib = i0 * sb[0] + i1 * sb[1] + i2 * sb[2] + i3 * sb[3];
          for (int i4 = 0; i4 < out.w; ++i4, ++o) {
            f(o, ia, ib);
            ia += sa[4];
            ib += sb[4];
          }
        }
      }
    }
  }
}

Tensor to_tensor(const Shape& s, const std::vector<double>& acc) {
  Tensor t(s);
  for (std::size_t i = 0; i < acc.size(); ++i) t[i] = static_cast<Real>(acc[i]);
  return t;
}

enum class BinaryKind { add, sub, mul, div };

Var binary(Var a, Var b, BinaryKind kind, const char* op) {
  same_tape(a, b);
  Tape& tape = tape_of(a);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  const Shape out_shape = broadcast_shape(va.shape(), vb.shape(), op);
  Tensor y(out_shape);
  const Real* pa = va.ptr();
  const Real* pb = vb.ptr();
  Real* py = y.ptr();
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(out_shape, va.shape(), vb.shape(),
                         [&](std::size_t o, std::size_t i, std::size_t j) { py[o] = pa[i] + pb[j]; });
      break;
    case BinaryKind::sub:
      for_each_broadcast(out_shape, va.shape(), vb.shape(),
                         [&](std::size_t o, std::size_t i, std::size_t j) { py[o] = pa[i] - pb[j]; });
      break;
    case BinaryKind::mul:
      for_each_broadcast(out_shape, va.shape(), vb.shape(),
                         [&](std::size_t o, std::size_t i, std::size_t j) { py[o] = pa[i] * pb[j]; });
      break;
    case BinaryKind::div:
      for_each_broadcast(out_shape, va.shape(), vb.shape(),
                         [&](std::size_t o, std::size_t i, std::size_t j) { py[o] = pa[i] / pb[j]; });
      break;
  }
  const int ia = a.id;
  const int ib = b.id;
  return tape.record(op, std::move(y), {ia, ib},
                     [ia, ib, kind, out_shape](Tape& t, const Tensor& g) {
    const Tensor& xa = t.value(ia);
    const Tensor& xb = t.value(ib);
    const Real* pa = xa.ptr();
    const Real* pb = xb.ptr();
    const Real* pg = g.ptr();
    const bool need_a = t.requires_grad(ia);
    const bool need_b = t.requires_grad(ib);
    std::vector<double> ga(need_a ? xa.size() : 0, 0.0);
    std::vector<double> gb(need_b ? xb.size() : 0, 0.0);
    for_each_broadcast(out_shape, xa.shape(), xb.shape(),
                       [&](std::size_t o, std::size_t i, std::size_t j) {
      const double go = pg[o];
      switch (kind) {
        case BinaryKind::add:
          if (need_a) ga[i] += go;
          if (need_b) gb[j] += go;
          break;
        case BinaryKind::sub:
          if (need_a) ga[i] += go;
          if (need_b) gb[j] -= go;
          break;
        case BinaryKind::mul:
          if (need_a) ga[i] += go * pb[j];
          if (need_b) gb[j] += go * pa[i];
          break;
        case BinaryKind::div: {
          const double inv = 1.0 / static_cast<double>(pb[j]);
          if (need_a) ga[i] += go * inv;
          if (need_b) gb[j] -= go * pa[i] * inv * inv;
          break;
        }
      }
    });
    if (need_a) t.accumulate(ia, to_tensor(xa.shape(), ga));
    if (need_b) t.accumulate(ib, to_tensor(xb.shape(), gb));
  });
}

}  // namespace

// ---- batch norm state ----------------------------------------------------

BatchNormState::BatchNormState(const std::string& prefix, int channels)
    : gamma(prefix + ".gamma", Tensor(Shape{1, channels, 1, 1, 1}, Real(1))),
      beta(prefix + ".beta", Tensor(Shape{1, channels, 1, 1, 1}, Real(0))),
      running_mean(Shape{1, channels, 1, 1, 1}, Real(0)),
      running_var(Shape{1, channels, 1, 1, 1}, Real(1)) {}

double softplus(double v) {
  if (v > 0) return v + std::log1p(std::exp(-v));
  return std::log1p(std::exp(v));
}

// ---- convolution ---------------------------------------------------------

Var conv3d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec) {
  same_tape(x, weight);
  if (bias) same_tape(x, *bias);
  Tape& tape = tape_of(x);
  Tensor y = kernels::conv3d_forward(x.value(), weight.value(),
                                     bias ? &bias->value() : nullptr, spec);
  std::vector<int> inputs{x.id, weight.id};
  const int ib = bias ? bias->id : -1;
  if (bias) inputs.push_back(ib);
  const int ix = x.id;
  const int iw = weight.id;
  return tape.record("conv3d", std::move(y), std::move(inputs),
                     [ix, iw, ib, spec](Tape& t, const Tensor& g) {
    if (t.requires_grad(ix)) {
      t.accumulate(ix, kernels::conv3d_backward_input(g, t.value(iw),
                                                      t.value(ix).shape(), spec));
    }
    if (t.requires_grad(iw)) {
      Tensor gw = Tensor::zeros_like(t.value(iw));
      kernels::conv3d_backward_weight(g, t.value(ix), spec, gw);
      t.accumulate(iw, gw);
    }
    if (ib >= 0 && t.requires_grad(ib)) {
      Tensor gb = Tensor::zeros_like(t.value(ib));
      kernels::conv3d_backward_bias(g, gb);
      t.accumulate(ib, gb);
    }
  });
}

// ---- activations ---------------------------------------------------------

Var elu(Var x) {
  Tape& tape = tape_of(x);
  Tensor y = map(x.value(), [](Real v) {
    return v >= 0 ? v : static_cast<Real>(std::expm1(static_cast<double>(v)));
  });
  const int ix = x.id;
  return tape.record("elu", std::move(y), {ix}, [ix](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const Real v = xv[i];
      gx[i] = v >= 0 ? g[i] : static_cast<Real>(g[i] * std::exp(static_cast<double>(v)));
    }
    t.accumulate(ix, gx);
  });
}

Var sigmoid(Var x) {
  Tape& tape = tape_of(x);
  Tensor y = map(x.value(), [](Real v) { return static_cast<Real>(stable_sigmoid(v)); });
  const int ix = x.id;
  const int iy = static_cast<int>(tape.size());
  return tape.record("sigmoid", std::move(y), {ix}, [ix, iy](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(iy);
    Tensor gx(yv.shape());
    for (std::size_t i = 0; i < yv.size(); ++i) {
      const double s = yv[i];
      gx[i] = static_cast<Real>(g[i] * s * (1.0 - s));
    }
    t.accumulate(ix, gx);
  });
}

Var relu(Var x) {
  Tape& tape = tape_of(x);
  Tensor y = map(x.value(), [](Real v) { return v > 0 ? v : Real(0); });
  const int ix = x.id;
  return tape.record("relu", std::move(y), {ix}, [ix](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = xv[i] > 0 ? g[i] : Real(0);
    t.accumulate(ix, gx);
  });
}

// ---- batch norm ----------------------------------------------------------

Var batchnorm(Var x, BatchNormState& state) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Shape s = xv.shape();
  if (state.channels() != s.c) {
    throw ConfigError("batchnorm: expects " + std::to_string(state.channels()) +
                      " channels, got " + std::to_string(s.c));
  }
  const std::size_t vol = s.spatial();
  const std::size_t count = static_cast<std::size_t>(s.n) * vol;
  if (count == 0) throw ConfigError("batchnorm: zero batch*spatial extent");

  std::vector<double> mean(s.c, 0.0);
  std::vector<double> inv_std(s.c, 0.0);
  const bool train = state.mode == NormMode::train;
  if (train && count < 2) {
    throw ConfigError("batchnorm: train mode needs at least 2 values per channel");
  }
  for (int c = 0; c < s.c; ++c) {
    double mu;
    double var;
    if (train) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const Real* p = xv.ptr() + (static_cast<std::size_t>(n) * s.c + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) acc += p[i];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const Real* p = xv.ptr() + (static_cast<std::size_t>(n) * s.c + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) {
          const double dlt = p[i] - mu;
          sq += dlt * dlt;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      const double m = state.momentum;
      state.running_mean[c] =
          static_cast<Real>((1.0 - m) * state.running_mean[c] + m * mu);
      state.running_var[c] =
          static_cast<Real>((1.0 - m) * state.running_var[c] + m * unbiased);
    } else {
      mu = state.running_mean[c];
      var = std::max(0.0, static_cast<double>(state.running_var[c]));
    }
    mean[c] = mu;
    inv_std[c] = 1.0 / std::sqrt(var + state.eps);
  }

  Var gamma = tape.param(state.gamma);
  Var beta = tape.param(state.beta);
  const Tensor& xv2 = tape.value(x);  // param() may have grown the tape
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  Tensor y(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * vol;
      const double a = gv[c] * inv_std[c];
      const double b = bv[c] - a * mean[c];
      for (std::size_t i = 0; i < vol; ++i) {
        y[base + i] = static_cast<Real>(a * xv2[base + i] + b);
      }
    }
  }
  const int ix = x.id;
  const int ig = gamma.id;
  const int ibeta = beta.id;
  return tape.record(train ? "batchnorm_train" : "batchnorm_eval", std::move(y),
                     {ix, ig, ibeta},
                     [ix, ig, ibeta, train, mean, inv_std](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    const Tensor& gv = t.value(ig);
    const Shape s = xv.shape();
    const std::size_t vol = s.spatial();
    const double count = static_cast<double>(s.n) * static_cast<double>(vol);
    Tensor gx(s);
    Tensor ggamma(gv.shape());
    Tensor gbeta(gv.shape());
    for (int c = 0; c < s.c; ++c) {
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) {
          const double xhat = (xv[base + i] - mean[c]) * inv_std[c];
          sum_g += g[base + i];
          sum_gx += g[base + i] * xhat;
        }
      }
      ggamma[c] = static_cast<Real>(sum_gx);
      gbeta[c] = static_cast<Real>(sum_g);
      const double scale_c = gv[c] * inv_std[c];
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) {
          if (train) {
            const double xhat = (xv[base + i] - mean[c]) * inv_std[c];
            gx[base + i] = static_cast<Real>(
                scale_c * (g[base + i] - sum_g / count - xhat * sum_gx / count));
          } else {
            gx[base + i] = static_cast<Real>(scale_c * g[base + i]);
          }
        }
      }
    }
    t.accumulate(ix, gx);
    t.accumulate(ig, ggamma);
    t.accumulate(ibeta, gbeta);
  });
}

// ---- pooling -------------------------------------------------------------

Var maxpool3d_2(Var x) {
  Tape& tape = tape_of(x);
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor y = kernels::maxpool3d_2_forward(x.value(), *argmax);
  const int ix = x.id;
  return tape.record("maxpool3d_2", std::move(y), {ix},
                     [ix, argmax](Tape& t, const Tensor& g) {
    t.accumulate(ix, kernels::maxpool3d_2_backward(g, *argmax, t.value(ix).shape()));
  });
}

Var global_avg_pool(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Shape s = xv.shape();
  const std::size_t vol = s.spatial();
  Tensor y(Shape{s.n, s.c, 1, 1, 1});
  for (std::size_t k = 0; k < static_cast<std::size_t>(s.n) * s.c; ++k) {
    double acc = 0.0;
    const Real* p = xv.ptr() + k * vol;
    for (std::size_t i = 0; i < vol; ++i) acc += p[i];
    y[k] = static_cast<Real>(acc / static_cast<double>(vol));
  }
  const int ix = x.id;
  return tape.record("global_avg_pool", std::move(y), {ix},
                     [ix, s, vol](Tape& t, const Tensor& g) {
    Tensor gx(s);
    for (std::size_t k = 0; k < static_cast<std::size_t>(s.n) * s.c; ++k) {
      const Real share = static_cast<Real>(g[k] / static_cast<double>(vol));
      std::fill(gx.ptr() + k * vol, gx.ptr() + (k + 1) * vol, share);
    }
    t.accumulate(ix, gx);
  });
}

Var global_max_pool(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Shape s = xv.shape();
  const std::size_t vol = s.spatial();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  Tensor y(Shape{s.n, s.c, 1, 1, 1});
  auto argmax = std::make_shared<std::vector<std::size_t>>(planes);
  for (std::size_t k = 0; k < planes; ++k) {
    const Real* p = xv.ptr() + k * vol;
    std::size_t best = 0;
    for (std::size_t i = 1; i < vol; ++i) {
      if (p[i] > p[best]) best = i;
    }
    y[k] = p[best];
    (*argmax)[k] = k * vol + best;
  }
  const int ix = x.id;
  return tape.record("global_max_pool", std::move(y), {ix},
                     [ix, s, argmax](Tape& t, const Tensor& g) {
    Tensor gx(s);
    for (std::size_t k = 0; k < argmax->size(); ++k) gx[(*argmax)[k]] += g[k];
    t.accumulate(ix, gx);
  });
}

Var channel_mean(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Shape s = xv.shape();
  const std::size_t vol = s.spatial();
  Tensor y(Shape{s.n, 1, s.d, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < vol; ++i) {
      double acc = 0.0;
      for (int c = 0; c < s.c; ++c) {
        acc += xv[(static_cast<std::size_t>(n) * s.c + c) * vol + i];
      }
      y[static_cast<std::size_t>(n) * vol + i] = static_cast<Real>(acc / s.c);
    }
  }
  const int ix = x.id;
  return tape.record("channel_mean", std::move(y), {ix},
                     [ix, s, vol](Tape& t, const Tensor& g) {
    Tensor gx(s);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        for (std::size_t i = 0; i < vol; ++i) {
          gx[(static_cast<std::size_t>(n) * s.c + c) * vol + i] =
              static_cast<Real>(g[static_cast<std::size_t>(n) * vol + i] /
                                static_cast<double>(s.c));
        }
      }
    }
    t.accumulate(ix, gx);
  });
}

Var channel_max(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Shape s = xv.shape();
  const std::size_t vol = s.spatial();
  Tensor y(Shape{s.n, 1, s.d, s.h, s.w});
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < vol; ++i) {
      std::size_t best = static_cast<std::size_t>(n) * s.c * vol + i;
      for (int c = 1; c < s.c; ++c) {
        const std::size_t o = (static_cast<std::size_t>(n) * s.c + c) * vol + i;
        if (xv[o] > xv[best]) best = o;
      }
      y[static_cast<std::size_t>(n) * vol + i] = xv[best];
      (*argmax)[static_cast<std::size_t>(n) * vol + i] = best;
    }
  }
  const int ix = x.id;
  return tape.record("channel_max", std::move(y), {ix},
                     [ix, s, argmax](Tape& t, const Tensor& g) {
    Tensor gx(s);
    for (std::size_t k = 0; k < argmax->size(); ++k) gx[(*argmax)[k]] += g[k];
    t.accumulate(ix, gx);
  });
}

// ---- linear / channel plumbing -------------------------------------------

Var linear(Var x, Var weight, std::optional<Var> bias) {
  same_tape(x, weight);
  if (bias) same_tape(x, *bias);
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Shape xs = xv.shape();
  const Shape ws = wv.shape();
  if (xs.spatial() != 1) {
    throw ConfigError("linear: input must be (n,f,1,1,1), got " + to_string(xs));
  }
  if (ws.c != xs.c || ws.spatial() != 1) {
    throw ConfigError("linear: weight " + to_string(ws) + " does not match " +
                      std::to_string(xs.c) + " input features");
  }
  if (bias && bias->value().size() != static_cast<std::size_t>(ws.n)) {
    throw ConfigError("linear: bias length does not match output features");
  }
  const int in_f = xs.c;
  const int out_f = ws.n;
  Tensor y(Shape{xs.n, out_f, 1, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    for (int o = 0; o < out_f; ++o) {
      double acc = bias ? static_cast<double>(bias->value()[o]) : 0.0;
      for (int f = 0; f < in_f; ++f) {
        acc += static_cast<double>(wv[static_cast<std::size_t>(o) * in_f + f]) *
               xv[static_cast<std::size_t>(n) * in_f + f];
      }
      y[static_cast<std::size_t>(n) * out_f + o] = static_cast<Real>(acc);
    }
  }
  std::vector<int> inputs{x.id, weight.id};
  const int ib = bias ? bias->id : -1;
  if (bias) inputs.push_back(ib);
  const int ix = x.id;
  const int iw = weight.id;
  return tape.record("linear", std::move(y), std::move(inputs),
                     [ix, iw, ib](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    const int batch = xv.shape().n;
    const int in_f = xv.shape().c;
    const int out_f = wv.shape().n;
    if (t.requires_grad(ix)) {
      Tensor gx(xv.shape());
      for (int n = 0; n < batch; ++n) {
        for (int f = 0; f < in_f; ++f) {
          double acc = 0.0;
          for (int o = 0; o < out_f; ++o) {
            acc += static_cast<double>(g[static_cast<std::size_t>(n) * out_f + o]) *
                   wv[static_cast<std::size_t>(o) * in_f + f];
          }
          gx[static_cast<std::size_t>(n) * in_f + f] = static_cast<Real>(acc);
        }
      }
      t.accumulate(ix, gx);
    }
    if (t.requires_grad(iw)) {
      Tensor gw(wv.shape());
      for (int o = 0; o < out_f; ++o) {
        for (int f = 0; f < in_f; ++f) {
          double acc = 0.0;
          for (int n = 0; n < batch; ++n) {
            acc += static_cast<double>(g[static_cast<std::size_t>(n) * out_f + o]) *
                   xv[static_cast<std::size_t>(n) * in_f + f];
          }
          gw[static_cast<std::size_t>(o) * in_f + f] = static_cast<Real>(acc);
        }
      }
      t.accumulate(iw, gw);
    }
    if (ib >= 0 && t.requires_grad(ib)) {
      Tensor gb(t.value(ib).shape());
      for (int o = 0; o < out_f; ++o) {
        double acc = 0.0;
        for (int n = 0; n < batch; ++n) acc += g[static_cast<std::size_t>(n) * out_f + o];
        gb[o] = static_cast<Real>(acc);
      }
      t.accumulate(ib, gb);
    }
  });
}

Var concat_channels(std::span<const Var> xs) {
  if (xs.empty()) throw ConfigError("concat_channels: no inputs");
  Tape& tape = tape_of(xs[0]);
  const Shape first = xs[0].shape();
  int channels = 0;
  std::vector<int> ids;
  std::vector<int> widths;
  for (const Var& v : xs) {
    same_tape(xs[0], v);
    const Shape s = v.shape();
    if (s.n != first.n || s.d != first.d || s.h != first.h || s.w != first.w) {
      throw ConfigError("concat_channels: shape " + to_string(s) +
                        " does not match " + to_string(first) +
                        " outside the channel axis");
    }
    channels += s.c;
    ids.push_back(v.id);
    widths.push_back(s.c);
  }
  const Shape os{first.n, channels, first.d, first.h, first.w};
  const std::size_t vol = first.spatial();
  Tensor y(os);
  for (int n = 0; n < first.n; ++n) {
    int c0 = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const Tensor& src = tape.value(ids[k]);
      const std::size_t len = static_cast<std::size_t>(widths[k]) * vol;
      std::copy_n(src.ptr() + static_cast<std::size_t>(n) * len, len,
                  y.ptr() + (static_cast<std::size_t>(n) * channels + c0) * vol);
      c0 += widths[k];
    }
  }
  return tape.record("concat_channels", std::move(y), ids,
                     [ids, widths, os, vol](Tape& t, const Tensor& g) {
    int c0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        const Shape s = t.value(ids[k]).shape();
        Tensor gx(s);
        const std::size_t len = static_cast<std::size_t>(widths[k]) * vol;
        for (int n = 0; n < os.n; ++n) {
          std::copy_n(g.ptr() + (static_cast<std::size_t>(n) * os.c + c0) * vol, len,
                      gx.ptr() + static_cast<std::size_t>(n) * len);
        }
        t.accumulate(ids[k], gx);
      }
      c0 += widths[k];
    }
  });
}

Var slice_channels(Var x, int begin, int count) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Shape s = xv.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ConfigError("slice_channels: [" + std::to_string(begin) + ", " +
                      std::to_string(begin + count) + ") outside " +
                      std::to_string(s.c) + " channels");
  }
  const std::size_t vol = s.spatial();
  const Shape os{s.n, count, s.d, s.h, s.w};
  Tensor y(os);
  for (int n = 0; n < s.n; ++n) {
    std::copy_n(xv.ptr() + (static_cast<std::size_t>(n) * s.c + begin) * vol,
                static_cast<std::size_t>(count) * vol,
                y.ptr() + static_cast<std::size_t>(n) * count * vol);
  }
  const int ix = x.id;
  return tape.record("slice_channels", std::move(y), {ix},
                     [ix, s, begin, count, vol](Tape& t, const Tensor& g) {
    Tensor gx(s);
    for (int n = 0; n < s.n; ++n) {
      std::copy_n(g.ptr() + static_cast<std::size_t>(n) * count * vol,
                  static_cast<std::size_t>(count) * vol,
                  gx.ptr() + (static_cast<std::size_t>(n) * s.c + begin) * vol);
    }
    t.accumulate(ix, gx);
  });
}

// ---- arithmetic ----------------------------------------------------------

Var add(Var a, Var b) { return binary(a, b, BinaryKind::add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinaryKind::sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinaryKind::mul, "mul"); }
Var div(Var a, Var b) { return binary(a, b, BinaryKind::div, "div"); }

Var add_scalar(Var x, double c) {
  Tape& tape = tape_of(x);
  Tensor y = map(x.value(), [c](Real v) { return static_cast<Real>(v + c); });
  const int ix = x.id;
  return tape.record("add_scalar", std::move(y), {ix},
                     [ix](Tape& t, const Tensor& g) { t.accumulate(ix, g); });
}

Var scale(Var x, double c) {
  Tape& tape = tape_of(x);
  Tensor y = map(x.value(), [c](Real v) { return static_cast<Real>(v * c); });
  const int ix = x.id;
  return tape.record("scale", std::move(y), {ix}, [ix, c](Tape& t, const Tensor& g) {
    t.accumulate(ix, map(g, [c](Real v) { return static_cast<Real>(v * c); }));
  });
}

Var sum(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  // Neumaier-compensated so finite-difference checks see a clean loss.
  double acc = 0.0;
  double comp = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    const double t = acc + v;
    comp += std::abs(acc) >= std::abs(v) ? (acc - t) + v : (v - t) + acc;
    acc = t;
  }
  acc += comp;
  const int ix = x.id;
  return tape.record("sum", Tensor::scalar(static_cast<Real>(acc)), {ix},
                     [ix](Tape& t, const Tensor& g) {
    t.accumulate(ix, Tensor(t.value(ix).shape(), g[0]));
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var softmax_channels(Var x) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const Shape s = xv.shape();
  const std::size_t vol = s.spatial();
  Tensor y(s);
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < vol; ++i) {
      auto at = [&](int c) { return (static_cast<std::size_t>(n) * s.c + c) * vol + i; };
      double mx = xv[at(0)];
      for (int c = 1; c < s.c; ++c) mx = std::max(mx, static_cast<double>(xv[at(c)]));
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) z += std::exp(xv[at(c)] - mx);
      for (int c = 0; c < s.c; ++c) {
        y[at(c)] = static_cast<Real>(std::exp(xv[at(c)] - mx) / z);
      }
    }
  }
  // Backward recomputes the probabilities in double: the gradient is a
  // difference of nearly equal terms and rounded outputs would dominate it.
  const int ix = x.id;
  return tape.record("softmax_channels", std::move(y), {ix},
                     [ix, s, vol](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    Tensor gx(s);
    std::vector<double> p(s.c);
    for (int n = 0; n < s.n; ++n) {
      for (std::size_t i = 0; i < vol; ++i) {
        auto at = [&](int c) { return (static_cast<std::size_t>(n) * s.c + c) * vol + i; };
        double mx = xv[at(0)];
        for (int c = 1; c < s.c; ++c) mx = std::max(mx, static_cast<double>(xv[at(c)]));
        double z = 0.0;
        for (int c = 0; c < s.c; ++c) z += p[c] = std::exp(xv[at(c)] - mx);
        double dot = 0.0;
        for (int c = 0; c < s.c; ++c) dot += static_cast<double>(g[at(c)]) * (p[c] /= z);
        for (int c = 0; c < s.c; ++c) {
          gx[at(c)] = static_cast<Real>(p[c] * (g[at(c)] - dot));
        }
      }
    }
    t.accumulate(ix, gx);
  });
}

}  // namespace gfn::inline GFN_ABI
