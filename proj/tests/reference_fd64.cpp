// Compiled with GFN_REAL_DOUBLE.
#include "reference_fd.hpp"

#include "kernel_cases.hpp"

namespace gfn_test {

namespace {
const std::vector<gfn::cases::KernelCase>& all_cases() {
  static const auto cases = gfn::cases::kernel_cases();
  return cases;
}
}  // namespace

std::size_t reference_case_count() { return all_cases().size(); }

std::string reference_case_name(std::size_t index) { return all_cases().at(index).name; }

std::vector<double> reference_central_difference(std::size_t index,
                                                 std::uint64_t seed) {
  using namespace gfn;
  const cases::KernelCase& c = all_cases().at(index);
  const ScalarFn f = cases::case_loss(c, seed);
  Tensor x = cases::case_input(c, seed);
  const double h = cases::reference_step(c);
  auto eval = [&](const Tensor& point) {
    Tape t;
    return static_cast<double>(t.value(f(t, t.constant(point))).item());
  };
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real orig = x[i];
    x[i] = orig + h;
    const double plus = eval(x);
    x[i] = orig - h;
    const double minus = eval(x);
    x[i] = orig;
    out[i] = (plus - minus) / (2 * h);
  }
  return out;
}

}  // namespace gfn_test
