#include "egcn/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>

namespace egcn::kern {

namespace {

std::atomic<int> g_threads{0};

int resolve_threads() {
  if (const char* env = std::getenv("EGCN_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return omp_get_max_threads();
}

// Panel kernels shared by the serial and OpenMP drivers. Each output element
// is accumulated over k in ascending order with explicit fma, so any
// partitioning of the output range yields bit-identical results.

void nn_panel(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
              double* C, bool acc, int64_t j0, int64_t j1) {
  int64_t i = 0;
  for (; i + 4 <= M; i += 4) {
    double* c0 = C + (i + 0) * N;
    double* c1 = C + (i + 1) * N;
    double* c2 = C + (i + 2) * N;
    double* c3 = C + (i + 3) * N;
    if (!acc) {
      std::fill(c0 + j0, c0 + j1, 0.0);
      std::fill(c1 + j0, c1 + j1, 0.0);
      std::fill(c2 + j0, c2 + j1, 0.0);
      std::fill(c3 + j0, c3 + j1, 0.0);
    }
    for (int64_t k = 0; k < K; ++k) {
      const double a0 = A[(i + 0) * K + k];
      const double a1 = A[(i + 1) * K + k];
      const double a2 = A[(i + 2) * K + k];
      const double a3 = A[(i + 3) * K + k];
      const double* b = B + k * N;
      for (int64_t j = j0; j < j1; ++j) {
        const double bj = b[j];
        c0[j] = std::fma(a0, bj, c0[j]);
        c1[j] = std::fma(a1, bj, c1[j]);
        c2[j] = std::fma(a2, bj, c2[j]);
        c3[j] = std::fma(a3, bj, c3[j]);
      }
    }
  }
  for (; i < M; ++i) {
    double* c = C + i * N;
    if (!acc) std::fill(c + j0, c + j1, 0.0);
    for (int64_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      const double* b = B + k * N;
      for (int64_t j = j0; j < j1; ++j) c[j] = std::fma(a, b[j], c[j]);
    }
  }
}

void tn_panel(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
              double* C, bool acc, int64_t j0, int64_t j1) {
  int64_t i = 0;
  for (; i + 4 <= M; i += 4) {
    double* c0 = C + (i + 0) * N;
    double* c1 = C + (i + 1) * N;
    double* c2 = C + (i + 2) * N;
    double* c3 = C + (i + 3) * N;
    if (!acc) {
      std::fill(c0 + j0, c0 + j1, 0.0);
      std::fill(c1 + j0, c1 + j1, 0.0);
      std::fill(c2 + j0, c2 + j1, 0.0);
      std::fill(c3 + j0, c3 + j1, 0.0);
    }
    for (int64_t k = 0; k < K; ++k) {
      const double* arow = A + k * M + i;
      const double a0 = arow[0], a1 = arow[1], a2 = arow[2], a3 = arow[3];
      const double* b = B + k * N;
      for (int64_t j = j0; j < j1; ++j) {
        const double bj = b[j];
        c0[j] = std::fma(a0, bj, c0[j]);
        c1[j] = std::fma(a1, bj, c1[j]);
        c2[j] = std::fma(a2, bj, c2[j]);
        c3[j] = std::fma(a3, bj, c3[j]);
      }
    }
  }
  for (; i < M; ++i) {
    double* c = C + i * N;
    if (!acc) std::fill(c + j0, c + j1, 0.0);
    for (int64_t k = 0; k < K; ++k) {
      const double a = A[k * M + i];
      const double* b = B + k * N;
      for (int64_t j = j0; j < j1; ++j) c[j] = std::fma(a, b[j], c[j]);
    }
  }
}

void nt_rows(int64_t N, int64_t K, const double* A, const double* B, double* C,
             bool acc, int64_t i0, int64_t i1) {
  for (int64_t i = i0; i < i1; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      int64_t k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 = std::fma(a[k + 0], b[k + 0], s0);
        s1 = std::fma(a[k + 1], b[k + 1], s1);
        s2 = std::fma(a[k + 2], b[k + 2], s2);
        s3 = std::fma(a[k + 3], b[k + 3], s3);
      }
      double s = (s0 + s1) + (s2 + s3);
      for (; k < K; ++k) s = std::fma(a[k], b[k], s);
      c[j] = acc ? c[j] + s : s;
    }
  }
}

void dw_chan(int64_t T, int64_t V, int64_t Tout, int64_t taps, int64_t stride,
             int64_t pad, const double* x, const double* w, double bias,
             double* y) {
  for (int64_t to = 0; to < Tout; ++to) {
    double* yr = y + to * V;
    std::fill(yr, yr + V, bias);
    const int64_t base = to * stride - pad;
    for (int64_t tap = 0; tap < taps; ++tap) {
      const int64_t t = base + tap;
      if (t < 0 || t >= T) continue;
      const double wv = w[tap];
      const double* xr = x + t * V;
      for (int64_t v = 0; v < V; ++v) yr[v] = std::fma(wv, xr[v], yr[v]);
    }
  }
}

constexpr int64_t kParallelFlops = 1 << 17;

}  // namespace

void set_threads(int n) { g_threads.store(n); }

int threads() {
  int n = g_threads.load();
  if (n <= 0) {
    n = resolve_threads();
    g_threads.store(n);
  }
  return n;
}

void gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool acc) {
  const int nt = threads();
  if (nt <= 1 || M * N * K < kParallelFlops) {
    nn_panel(M, N, K, A, B, C, acc, 0, N);
    return;
  }
  if (N < 128 && M >= 2 * nt) {
    // Narrow output: split over row blocks instead of column panels.
#pragma omp parallel num_threads(nt)
    {
      const int64_t p = omp_get_num_threads();
      const int64_t r = omp_get_thread_num();
      const int64_t i0 = M * r / p, i1 = M * (r + 1) / p;
      if (i0 < i1) nn_panel(i1 - i0, N, K, A + i0 * K, B, C + i0 * N, acc, 0, N);
    }
    return;
  }
#pragma omp parallel num_threads(nt)
  {
    const int64_t p = omp_get_num_threads();
    const int64_t r = omp_get_thread_num();
    const int64_t j0 = N * r / p, j1 = N * (r + 1) / p;
    if (j0 < j1) nn_panel(M, N, K, A, B, C, acc, j0, j1);
  }
}

void gemm_tn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool acc) {
  const int nt = threads();
  if (nt <= 1 || M * N * K < kParallelFlops) {
    tn_panel(M, N, K, A, B, C, acc, 0, N);
    return;
  }
#pragma omp parallel num_threads(nt)
  {
    const int64_t p = omp_get_num_threads();
    const int64_t r = omp_get_thread_num();
    const int64_t j0 = N * r / p, j1 = N * (r + 1) / p;
    if (j0 < j1) tn_panel(M, N, K, A, B, C, acc, j0, j1);
  }
}

void gemm_nt(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool acc) {
  const int nt = threads();
  if (nt <= 1 || M * N * K < kParallelFlops) {
    nt_rows(N, K, A, B, C, acc, 0, M);
    return;
  }
#pragma omp parallel num_threads(nt)
  {
    const int64_t p = omp_get_num_threads();
    const int64_t r = omp_get_thread_num();
    const int64_t i0 = M * r / p, i1 = M * (r + 1) / p;
    if (i0 < i1) nt_rows(N, K, A, B, C, acc, i0, i1);
  }
}

void dwconv_t(int64_t C, int64_t T, int64_t V, int64_t Tout, int64_t taps,
              int64_t stride, int64_t pad, const double* x, const double* w,
              const double* bias, double* y) {
  const int nt = threads();
  if (nt <= 1 || C * Tout * V * taps < kParallelFlops) {
    for (int64_t c = 0; c < C; ++c) {
      dw_chan(T, V, Tout, taps, stride, pad, x + c * T * V, w + c * taps,
              bias ? bias[c] : 0.0, y + c * Tout * V);
    }
    return;
  }
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int64_t c = 0; c < C; ++c) {
    dw_chan(T, V, Tout, taps, stride, pad, x + c * T * V, w + c * taps,
            bias ? bias[c] : 0.0, y + c * Tout * V);
  }
}

void axpy(int64_t n, double a, const double* x, double* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

namespace serial {

void gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool acc) {
  nn_panel(M, N, K, A, B, C, acc, 0, N);
}
void gemm_tn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool acc) {
  tn_panel(M, N, K, A, B, C, acc, 0, N);
}
void gemm_nt(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
             double* C, bool acc) {
  nt_rows(N, K, A, B, C, acc, 0, M);
}
void dwconv_t(int64_t C, int64_t T, int64_t V, int64_t Tout, int64_t taps,
              int64_t stride, int64_t pad, const double* x, const double* w,
              const double* bias, double* y) {
  for (int64_t c = 0; c < C; ++c) {
    dw_chan(T, V, Tout, taps, stride, pad, x + c * T * V, w + c * taps,
            bias ? bias[c] : 0.0, y + c * Tout * V);
  }
}

}  // namespace serial
}  // namespace egcn::kern
