#pragma once

#include <cstdint>

namespace egcn::kern {

/// Number of worker threads for the parallel kernels. 0 picks the value of
/// EGCN_THREADS, falling back to the OpenMP default.
void set_threads(int n);
int threads();

// Row-major GEMM family. `accumulate` adds into C instead of overwriting.
// Every output element is reduced in a fixed order, so results are
// bit-identical for any thread count.

/// C (MxN) = A (MxK) * B (KxN)
void gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool accumulate);
/// C (MxN) = A^T * B with A stored (KxM)
void gemm_tn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool accumulate);
/// C (MxN) = A * B^T with B stored (NxK)
void gemm_nt(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool accumulate);

/// Depthwise temporal convolution on one sample laid out (C,T,V):
/// y[c,to,v] = bias[c] + sum_tap w[c,tap] * x[c, to*stride - pad + tap, v].
/// bias may be null. y has shape (C,Tout,V).
void dwconv_t(int64_t C, int64_t T, int64_t V, int64_t Tout, int64_t taps,
              int64_t stride, int64_t pad, const double* x, const double* w,
              const double* bias, double* y);

/// y[i] += a * x[i]
void axpy(int64_t n, double a, const double* x, double* y);

// Single-thread reference drivers (same arithmetic, same per-element
// reduction order as the parallel versions).
namespace serial {
void gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool accumulate);
void gemm_tn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool accumulate);
void gemm_nt(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool accumulate);
void dwconv_t(int64_t C, int64_t T, int64_t V, int64_t Tout, int64_t taps,
              int64_t stride, int64_t pad, const double* x, const double* w,
              const double* bias, double* y);
}  // namespace serial

}  // namespace egcn::kern
