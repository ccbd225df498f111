#pragma once

namespace kpt {

// Scalar type of every tensor. The gradient-check build flips this to double.
#ifdef KPT_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace kpt
