#pragma once

// Finite-difference cases for the network blocks, shared by the 64-bit
// netblocks suite and the acceptance binary. Each case checks the gradient
// with respect to the block input and every block parameter.

#include <algorithm>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gfn/gradcheck.hpp"
#include "gfn/netblocks.hpp"
#include "oracles.hpp"

namespace gfn::inline GFN_ABI::cases {

struct BlockCase {
  std::string name;
  std::function<GradCheckResult()> run;
};

/// Non-trivial values for a block built outside GateFuseNet (constructors
/// leave everything at zero).
inline void randomize(const ParamList& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto ends = [](const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
  };
  for (Parameter* p : params) {
    Tensor& v = p->value;
    double lo = -0.1, hi = 0.1;
    if (ends(p->name, ".weight")) {
      const Shape& s = v.shape();
      hi = std::sqrt(3.0 / (s.c * s.d * s.h * s.w));
      lo = -hi;
    } else if (ends(p->name, ".gamma")) {
      lo = 0.8, hi = 1.2;
    } else if (ends(p->name, ".theta")) {
      lo = -0.5, hi = 0.5;
    }
    std::uniform_real_distribution<double> u(lo, hi);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Real>(static_cast<float>(u(rng)));
  }
}

inline GradCheckResult worse(GradCheckResult a, const GradCheckResult& b) {
  const std::size_t n = a.coords_checked + b.coords_checked;
  if (b.max_rel_error > a.max_rel_error) a = b;
  a.coords_checked = n;
  return a;
}

/// Loss sum(r * (f(x) - f(x0))) checked against x and params. The baseline
/// is taken once at the starting point, so it is a constant for both checks.
inline GradCheckResult check_block(const std::function<Var(Tape&, Var)>& f, const Tensor& x0,
                                   const ParamList& params, double step,
                                   std::uint64_t seed, std::size_t max_coords = 0) {
  Tensor baseline;
  {
    Tape t;
    baseline = f(t, t.constant(x0)).value();
  }
  const Tensor r = oracle::random_tensor(baseline.shape(), seed + 999, 0.5, 1.5);
  auto loss = [&](Tape& t, Var x) {
    return sum(mul(sub(f(t, x), t.constant(baseline)), t.constant(r)));
  };
  GradCheckOptions opt;
  opt.max_coords = max_coords;
  opt.seed = seed;
  GradCheckResult res = grad_check(loss, x0, step, opt);
  if (!params.empty()) {
    auto ploss = [&](Tape& t) { return loss(t, t.constant(x0)); };
    res = worse(res, grad_check_params(ploss, params, step, opt));
  }
  return res;
}

/// Splits a packed (n, 3C, ...) tensor into a modality triple.
inline Triple unpack(Var x) {
  const int c = x.shape().c / 3;
  Triple t;
  for (int m = 0; m < 3; ++m) t.v[m] = slice_channels(x, m * c, c);
  return t;
}

inline NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.stem_width = 8;
  cfg.stage_widths = {8};
  return cfg;
}

// The blocks contain max and relu kinks, so the step must stay small, but
// gradients down to 1e-6 also need it large enough that rounding in the loss
// does not dominate. 1e-5 crosses no kink on these inputs.
inline constexpr double kBlockStep = 1e-5;

inline std::vector<BlockCase> block_cases() {
  std::vector<BlockCase> out;

  out.push_back({"stem", [] {
    auto stem = std::make_shared<Stem>("stem.QSM", 2, 4);
    ParamList ps;
    stem->collect(ps);
    randomize(ps, 11);
    const Tensor x = oracle::random_tensor({2, 2, 6, 6, 6}, 12);
    return check_block([stem](Tape& t, Var v) { return (*stem)(t, v); }, x, ps, kBlockStep, 1);
  }});

  out.push_back({"cbam", [] {
    auto cbam = std::make_shared<CBAM>("cbam", 8, 4, 3);
    ParamList ps;
    cbam->collect(ps);
    randomize(ps, 21);
    const Tensor x = oracle::random_tensor({2, 8, 4, 4, 4}, 22);
    return check_block([cbam](Tape& t, Var v) { return (*cbam)(t, v); }, x, ps, kBlockStep, 2);
  }});

  auto bottleneck = [](std::string name, int in, int out, int stride, int dil, int size) {
    return BlockCase{name, [=] {
      NetworkConfig cfg = small_config();
      auto b = std::make_shared<Bottleneck>("b", in, out, stride, dil, cfg);
      ParamList ps;
      b->collect(ps);
      randomize(ps, 31 + stride + dil);
      const Tensor x = oracle::random_tensor({2, in, size, size, size}, 32);
      return check_block([b](Tape& t, Var v) { return (*b)(t, v); }, x, ps, kBlockStep, 3);
    }};
  };
  out.push_back(bottleneck("bottleneck standard", 8, 8, 1, 1, 4));
  out.push_back(bottleneck("bottleneck dilated 2", 8, 8, 1, 2, 5));
  out.push_back(bottleneck("bottleneck stride 2 projection", 4, 8, 2, 1, 6));

  out.push_back({"amf", [] {
    NetworkConfig cfg = small_config();
    auto amf = std::make_shared<AMF>("amf", 4, cfg);
    ParamList ps;
    amf->collect(ps);
    randomize(ps, 41);
    const Tensor x = oracle::random_tensor({2, 12, 4, 4, 4}, 42);
    return check_block([amf](Tape& t, Var v) { return (*amf)(t, unpack(v)); }, x, ps,
                       kBlockStep, 4);
  }});

  out.push_back({"gate theta", [] {
    auto gate = std::make_shared<ChannelGate>("gate", 8, 0.0);
    ParamList ps;
    gate->collect(ps);
    randomize(ps, 51);
    const Tensor x = oracle::random_tensor({1, 16, 3, 3, 3}, 52);
    return check_block(
        [gate](Tape& t, Var v) {
          return (*gate)(t, slice_channels(v, 0, 8), slice_channels(v, 8, 8));
        },
        x, ps, kBlockStep, 5);
  }});

  // The gated block has ~20k coordinates at quadratic cost; sample it.
  auto gf = [](std::string name, FusionStrategy s, Modality anchor) {
    return BlockCase{name, [=] {
      NetworkConfig cfg = small_config();
      cfg.fusion = s;
      cfg.anchor = anchor;
      auto block = std::make_shared<GFBlock>("gf", 8, cfg);
      ParamList ps;
      block->collect(ps);
      randomize(ps, 61);
      const Tensor x = oracle::random_tensor({1, 24, 6, 6, 6}, 62);
      return check_block(
          [block](Tape& t, Var v) {
            Triple y = (*block)(t, unpack(v));
            return concat_channels(y.v);
          },
          x, ps, kBlockStep, 6, s == FusionStrategy::gated ? 512 : 0);
    }};
  };
  out.push_back(gf("gf block gated (1,8,6,6,6)", FusionStrategy::gated, Modality::roi));
  out.push_back(gf("gf block gated, QSM anchor", FusionStrategy::gated, Modality::qsm));
  out.push_back(gf("gf block concat", FusionStrategy::concat, Modality::roi));
  out.push_back(gf("gf block weighted_average", FusionStrategy::weighted_average, Modality::roi));

  return out;
}

/// Whole network, widths 4/8/8 at 12^3, batch 2. Every input coordinate is
/// checked; parameters are sampled (32 coordinates per tensor).
inline GradCheckResult micro_network_check() {
  NetworkConfig cfg;
  cfg.set_widths("4/8/8");
  auto net = std::make_shared<GateFuseNet>(cfg);
  net->init_params(7);
  ParamList ps = net->parameters();
  // Open gates a little away from the init value and give biases some
  // spread, so no parameter sits at a symmetric point.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (Parameter* p : ps) {
    if (p->name.ends_with(".weight") || p->name.ends_with(".gamma")) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->value[i] = static_cast<Real>(static_cast<float>(u(rng)));
    }
  }
  const int k = cfg.roi_channels;
  const Tensor x = oracle::random_tensor({2, k + 2, 12, 12, 12}, 9);
  auto f = [net, k](Tape& t, Var v) {
    Triple in;
    in[Modality::roi] = slice_channels(v, 0, k);
    in[Modality::qsm] = slice_channels(v, k, 1);
    in[Modality::t1] = slice_channels(v, k + 1, 1);
    return net->forward(t, in);
  };
  return check_block(f, x, ps, kBlockStep, 7, 32);
}

}  // namespace gfn::inline GFN_ABI::cases
