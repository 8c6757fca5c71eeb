#include "kernels.hpp"

#include <cblas.h>

#include <algorithm>

MF_NUMERIC_BEGIN
namespace kernels {
namespace {

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t k, std::size_t n,
          const Scalar* a, std::size_t lda, const Scalar* b, std::size_t ldb, Scalar* c,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, Scalar(0));
    return;
  }
  const Scalar beta = accumulate ? Scalar(1) : Scalar(0);
  const auto M = static_cast<blasint>(m);
  const auto N = static_cast<blasint>(n);
  const auto K = static_cast<blasint>(k);
#if defined(MF_NUMERIC_F64)
  cblas_dgemm(CblasRowMajor, ta, tb, M, N, K, 1.0, a, static_cast<blasint>(lda), b,
              static_cast<blasint>(ldb), beta, c, N);
#else
  cblas_sgemm(CblasRowMajor, ta, tb, M, N, K, 1.0f, a, static_cast<blasint>(lda), b,
              static_cast<blasint>(ldb), beta, c, N);
#endif
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b,
             Scalar* c, bool accumulate) {
  gemm(CblasNoTrans, CblasNoTrans, m, k, n, a, k, b, n, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b,
             Scalar* c, bool accumulate) {
  gemm(CblasNoTrans, CblasTrans, m, k, n, a, k, b, k, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b,
             Scalar* c, bool accumulate) {
  gemm(CblasTrans, CblasNoTrans, m, k, n, a, m, b, n, c, accumulate);
}

}  // namespace kernels
MF_NUMERIC_END
