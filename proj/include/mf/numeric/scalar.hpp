#pragma once

// The numeric engine and everything built on it is compiled once per scalar
// type. Production code uses 32-bit floats; a 64-bit build of the same sources
// serves as the high-precision finite-difference oracle. Each build lives in
// its own inline namespace so both can be linked into one binary.
#if defined(MF_NUMERIC_F64)
#define MF_NUMERIC_BEGIN \
  namespace mf {         \
  inline namespace f64 {
#define MF_NUMERIC_END \
  }                    \
  }
MF_NUMERIC_BEGIN
using Scalar = double;
MF_NUMERIC_END
#else
#define MF_NUMERIC_BEGIN \
  namespace mf {         \
  inline namespace f32 {
#define MF_NUMERIC_END \
  }                    \
  }
MF_NUMERIC_BEGIN
using Scalar = float;
MF_NUMERIC_END
#endif
