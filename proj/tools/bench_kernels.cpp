// Throughput comparison of the serial reference kernels against the
// OpenMP-parallel ones, at sizes the network actually runs.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "egcn/kernels.hpp"

using namespace egcn;
using clk = std::chrono::steady_clock;

namespace {

std::vector<double> randu(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = clk::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = clk::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void bench_gemm(const char* tag, int64_t M, int64_t N, int64_t K, int reps) {
  std::mt19937_64 rng(42);
  auto A = randu(static_cast<size_t>(M * K), rng);
  auto B = randu(static_cast<size_t>(K * N), rng);
  std::vector<double> C(static_cast<size_t>(M * N));
  const double flops = 2.0 * static_cast<double>(M) * N * K;
  const double ts = time_of([&] { kern::serial::gemm_nn(M, N, K, A.data(), B.data(), C.data(), false); }, reps);
  const double tp = time_of([&] { kern::gemm_nn(M, N, K, A.data(), B.data(), C.data(), false); }, reps);
  std::printf("%-28s %5lld x %5lld x %4lld   serial %7.2f GF/s   omp(%d) %7.2f GF/s   x%.2f\n",
              tag, static_cast<long long>(M), static_cast<long long>(N),
              static_cast<long long>(K), flops / ts * 1e-9, kern::threads(),
              flops / tp * 1e-9, ts / tp);
}

void bench_dw(int64_t C, int64_t T, int64_t V, int64_t stride, int reps) {
  std::mt19937_64 rng(43);
  const int64_t taps = 5, pad = 2;
  const int64_t Tout = (T - 1) / stride + 1;
  auto x = randu(static_cast<size_t>(C * T * V), rng);
  auto w = randu(static_cast<size_t>(C * taps), rng);
  std::vector<double> y(static_cast<size_t>(C * Tout * V));
  const double flops = 2.0 * static_cast<double>(C) * Tout * V * taps;
  const double ts = time_of([&] {
    kern::serial::dwconv_t(C, T, V, Tout, taps, stride, pad, x.data(), w.data(), nullptr, y.data());
  }, reps);
  const double tp = time_of([&] {
    kern::dwconv_t(C, T, V, Tout, taps, stride, pad, x.data(), w.data(), nullptr, y.data());
  }, reps);
  std::printf("dwconv_t C=%-4lld T=%-4lld V=%-3lld s=%lld      serial %7.2f GF/s   omp(%d) %7.2f GF/s   x%.2f\n",
              static_cast<long long>(C), static_cast<long long>(T),
              static_cast<long long>(V), static_cast<long long>(stride),
              flops / ts * 1e-9, kern::threads(), flops / tp * 1e-9, ts / tp);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", kern::threads());
  // 1x1 convolutions at B0 shapes (columns = T*V per sample, M folded in).
  bench_gemm("conv1x1 stem (intra)", 64, 7500, 3, 50);
  bench_gemm("conv1x1 main  (intra)", 84, 7500, 192, 10);
  bench_gemm("conv1x1 expand", 192, 3750, 96, 10);
  bench_gemm("conv1x1 tiny training", 21, 7500, 48, 50);
  // Node mixing: (C*T, V) @ (V, V).
  bench_gemm("node_mix intra", 84 * 150, 25, 25, 10);
  bench_gemm("node_mix inter", 60 * 150, 50, 50, 10);
  bench_dw(192, 150, 25, 2, 50);
  bench_dw(160, 75, 50, 2, 50);
  return 0;
}
