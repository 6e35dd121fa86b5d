#include "gfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gfn/random.hpp"

namespace gfn::inline GFN_ABI {

namespace {

std::vector<std::size_t> pick_coords(std::size_t size, const GradCheckOptions& opt,
                                     Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opt.max_coords == 0) return idx;
  const std::size_t want = std::max<std::size_t>(opt.max_coords, 32);
  if (size <= want) return idx;
  for (std::size_t i = 0; i < want; ++i) {
    std::swap(idx[i], idx[i + rng.below(size - i)]);
  }
  idx.resize(want);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void record(GradCheckResult& r, double analytic, double numeric,
            const std::string& where) {
  const double err = relative_error(analytic, numeric);
  ++r.coords_checked;
  if (r.coords_checked == 1 || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_location = where;
    r.analytic_at_worst = analytic;
    r.numeric_at_worst = numeric;
  }
}

}  // namespace

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double step,
                           const GradCheckOptions& options) {
  if (!(step > 0)) throw ConfigError("grad_check: step must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var in = tape.leaf(x);
    Var out = f(tape, in);
    tape.backward(out);
    analytic = tape.grad(in);
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    Var in = tape.constant(point);
    return static_cast<double>(tape.value(f(tape, in)).item());
  };
  Rng rng(options.seed);
  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i : pick_coords(x.size(), options, rng)) {
    const Real orig = probe[i];
    probe[i] = static_cast<Real>(orig + step);
    const double plus = eval(probe);
    probe[i] = static_cast<Real>(orig - step);
    const double minus = eval(probe);
    probe[i] = orig;
    const double numeric = (plus - minus) / (2.0 * step);
    record(result, analytic[i], numeric, "x[" + std::to_string(i) + "]");
  }
  return result;
}

GradCheckResult grad_check_params(const LossFn& f,
                                  std::span<Parameter* const> params,
                                  double step,
                                  const GradCheckOptions& options) {
  if (!(step > 0)) throw ConfigError("grad_check: step must be positive");
  {
    Tape tape;
    Var loss = f(tape);
    backprop(tape, loss, params);
  }
  auto eval = [&] {
    Tape tape;
    return static_cast<double>(tape.value(f(tape)).item());
  };
  Rng rng(options.seed);
  GradCheckResult result;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i : pick_coords(p->value.size(), options, rng)) {
      const Real orig = p->value[i];
      p->value[i] = static_cast<Real>(orig + step);
      const double plus = eval();
      p->value[i] = static_cast<Real>(orig - step);
      const double minus = eval();
      p->value[i] = orig;
      const double numeric = (plus - minus) / (2.0 * step);
      record(result, analytic[i], numeric, p->name + "[" + std::to_string(i) + "]");
    }
  }
  return result;
}

}  // namespace gfn::inline GFN_ABI
