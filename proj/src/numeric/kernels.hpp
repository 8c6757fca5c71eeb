#pragma once

#include <cstddef>

#include "mf/numeric/scalar.hpp"

MF_NUMERIC_BEGIN
namespace kernels {

// Row-major dense products. When accumulate is false C is overwritten.
// C[m,n] = A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b,
             Scalar* c, bool accumulate);
// C[m,n] = A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b,
             Scalar* c, bool accumulate);
// C[m,n] = A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b,
             Scalar* c, bool accumulate);

}  // namespace kernels
MF_NUMERIC_END
