#pragma once

// Precision selection and the error types shared by every module.
//
// The library is compiled twice: the default 32-bit build used for training
// and inference, and a 64-bit build (GFN_REAL_DOUBLE) used for finite
// difference gradient checking. Each build lives in its own inline namespace
// so both can be linked into the same executable.

#include <stdexcept>
#include <string>

#if defined(GFN_REAL_DOUBLE)
#define GFN_ABI f64
#else
#define GFN_ABI f32
#endif

namespace gfn::inline GFN_ABI {

#if defined(GFN_REAL_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

inline constexpr bool kDoublePrecision = sizeof(Real) == sizeof(double);

/// Invalid shapes, inconsistent settings, violated preconditions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures; the message always carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf in values or gradients, training divergence.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// True when GFN_CHECK_FINITE=1 is set in the environment (read once).
bool check_finite_enabled();

/// Writes a warning line to stderr.
void warn(const std::string& message);

}  // namespace gfn::inline GFN_ABI
