#include "gfn/common.hpp"

#include <cstdlib>
#include <cstring>
#include <iostream>

namespace gfn::inline GFN_ABI {

bool check_finite_enabled() {
  static const bool enabled = [] {
    const char* v = std::getenv("GFN_CHECK_FINITE");
    return v != nullptr && std::strcmp(v, "1") == 0;
  }();
  return enabled;
}

void warn(const std::string& message) {
  std::cerr << "warning: " << message << '\n';
}

}  // namespace gfn::inline GFN_ABI
