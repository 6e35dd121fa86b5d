#pragma once

// Precision-neutral bridge: central differences computed by the 64-bit build
// for the shared kernel cases, callable from 32-bit test code.

#include <cstdint>
#include <string>
#include <vector>

namespace gfn_test {

std::size_t reference_case_count();
std::string reference_case_name(std::size_t index);

/// d loss / d x for every coordinate of the case input, by 64-bit central
/// differences.
std::vector<double> reference_central_difference(std::size_t index,
                                                 std::uint64_t seed);

}  // namespace gfn_test
