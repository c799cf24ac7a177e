#pragma once

// Thin typed wrapper over CBLAS so the numeric core can be instantiated with
// float (training) or double (finite-difference oracles in the tests).

#include <cblas.h>

namespace kamp {

// C[M,N] = alpha * op(A) * op(B) + beta * C, row-major.
// op(A) is [M,K], op(B) is [K,N]; lda/ldb/ldc are the row strides of the
// stored (untransposed) matrices.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta, float* c,
                 int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta,
              c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta,
                 double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta,
              c, ldc);
}

}  // namespace kamp
