#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "egcn/kernels.hpp"

using namespace egcn;

namespace {

std::vector<double> randu(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Plain triple loop, no fma: independent numeric oracle.
void naive_nn(int64_t M, int64_t N, int64_t K, const double* A, const double* B,
              double* C) {
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (int64_t k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
      C[i * N + j] = s;
    }
  }
}

}  // namespace

TEST_CASE("gemm_nn matches naive oracle") {
  std::mt19937_64 rng(1);
  const int64_t dims[][3] = {{3, 5, 4}, {17, 33, 9}, {64, 375, 48}, {1, 7, 1}};
  for (const auto& dim : dims) {
    const int64_t M = dim[0], N = dim[1], K = dim[2];
    auto A = randu(static_cast<size_t>(M * K), rng);
    auto B = randu(static_cast<size_t>(K * N), rng);
    std::vector<double> C(static_cast<size_t>(M * N)), R(static_cast<size_t>(M * N));
    kern::gemm_nn(M, N, K, A.data(), B.data(), C.data(), false);
    naive_nn(M, N, K, A.data(), B.data(), R.data());
    for (size_t i = 0; i < C.size(); ++i) CHECK(C[i] == doctest::Approx(R[i]).epsilon(1e-12));
  }
}

TEST_CASE("gemm_tn and gemm_nt match transposed oracle") {
  std::mt19937_64 rng(2);
  const int64_t M = 21, N = 19, K = 35;
  auto A = randu(static_cast<size_t>(M * K), rng);
  auto B = randu(static_cast<size_t>(K * N), rng);
  std::vector<double> ref(static_cast<size_t>(M * N));
  naive_nn(M, N, K, A.data(), B.data(), ref.data());

  // TN: pass A stored transposed (K x M).
  std::vector<double> At(static_cast<size_t>(K * M));
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t k = 0; k < K; ++k) At[static_cast<size_t>(k * M + i)] = A[static_cast<size_t>(i * K + k)];
  }
  std::vector<double> C1(static_cast<size_t>(M * N));
  kern::gemm_tn(M, N, K, At.data(), B.data(), C1.data(), false);
  for (size_t i = 0; i < C1.size(); ++i) CHECK(C1[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  // NT: pass B stored transposed (N x K).
  std::vector<double> Bt(static_cast<size_t>(N * K));
  for (int64_t k = 0; k < K; ++k) {
    for (int64_t j = 0; j < N; ++j) Bt[static_cast<size_t>(j * K + k)] = B[static_cast<size_t>(k * N + j)];
  }
  std::vector<double> C2(static_cast<size_t>(M * N));
  kern::gemm_nt(M, N, K, A.data(), Bt.data(), C2.data(), false);
  for (size_t i = 0; i < C2.size(); ++i) CHECK(C2[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("accumulate mode adds on top of existing values") {
  std::mt19937_64 rng(3);
  const int64_t M = 6, N = 11, K = 7;
  auto A = randu(static_cast<size_t>(M * K), rng);
  auto B = randu(static_cast<size_t>(K * N), rng);
  std::vector<double> C(static_cast<size_t>(M * N), 0.5), R(static_cast<size_t>(M * N));
  naive_nn(M, N, K, A.data(), B.data(), R.data());
  kern::gemm_nn(M, N, K, A.data(), B.data(), C.data(), true);
  for (size_t i = 0; i < C.size(); ++i) CHECK(C[i] == doctest::Approx(R[i] + 0.5).epsilon(1e-12));
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  std::mt19937_64 rng(4);
  const int64_t M = 96, N = 3750, K = 84;  // big enough to trigger threading
  auto A = randu(static_cast<size_t>(M * K), rng);
  auto B = randu(static_cast<size_t>(K * N), rng);
  std::vector<double> Cp(static_cast<size_t>(M * N)), Cs(static_cast<size_t>(M * N));
  kern::set_threads(4);
  kern::gemm_nn(M, N, K, A.data(), B.data(), Cp.data(), false);
  kern::serial::gemm_nn(M, N, K, A.data(), B.data(), Cs.data(), false);
  CHECK(Cp == Cs);

  std::vector<double> Dp(static_cast<size_t>(M * N)), Ds(static_cast<size_t>(M * N));
  std::vector<double> At(static_cast<size_t>(K * M));
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t k = 0; k < K; ++k) At[static_cast<size_t>(k * M + i)] = A[static_cast<size_t>(i * K + k)];
  }
  kern::gemm_tn(M, N, K, At.data(), B.data(), Dp.data(), false);
  kern::serial::gemm_tn(M, N, K, At.data(), B.data(), Ds.data(), false);
  CHECK(Dp == Ds);
  kern::set_threads(0);
}

TEST_CASE("depthwise temporal conv: lengths, padding, serial/parallel equality") {
  std::mt19937_64 rng(5);
  const int64_t C = 64, T = 16, V = 25, taps = 5, stride = 2, pad = 2;
  const int64_t Tout = (T - 1) / stride + 1;
  CHECK(Tout == 8);  // floor((16+2*2-5)/2)+1
  auto x = randu(static_cast<size_t>(C * T * V), rng);
  auto w = randu(static_cast<size_t>(C * taps), rng);
  auto b = randu(static_cast<size_t>(C), rng);
  std::vector<double> yp(static_cast<size_t>(C * Tout * V)), ys(yp.size());
  kern::set_threads(4);
  kern::dwconv_t(C, T, V, Tout, taps, stride, pad, x.data(), w.data(), b.data(), yp.data());
  kern::serial::dwconv_t(C, T, V, Tout, taps, stride, pad, x.data(), w.data(), b.data(), ys.data());
  CHECK(yp == ys);
  kern::set_threads(0);

  // Spot-check one output against a direct sum.
  const int64_t c = 3, to = 0, v = 7;
  double ref = b[static_cast<size_t>(c)];
  for (int64_t tap = 0; tap < taps; ++tap) {
    const int64_t t = to * stride - pad + tap;
    if (t < 0 || t >= T) continue;
    ref += w[static_cast<size_t>(c * taps + tap)] * x[static_cast<size_t>((c * T + t) * V + v)];
  }
  CHECK(ys[static_cast<size_t>((c * Tout + to) * V + v)] == doctest::Approx(ref).epsilon(1e-12));
}
