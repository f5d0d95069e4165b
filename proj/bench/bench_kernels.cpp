// Serial reference vs OpenMP kernels at the shapes the model actually
// runs: the attention projection matmul and the backbone convolutions.

#include <benchmark/benchmark.h>

#include <vector>

#include "seqcount/kernels.hpp"
#include "seqcount/rng.hpp"

using namespace seqcount;

namespace {

std::vector<double> random_vec(size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void bm_matmul_serial(benchmark::State& state) {
  const int m = 64, k = 208, n = 256;  // W_f (attn x dim) times f (dim x cells)
  const auto a = random_vec(static_cast<size_t>(m) * k, 1);
  const auto b = random_vec(static_cast<size_t>(k) * n, 2);
  std::vector<double> c(static_cast<size_t>(m) * n);
  for (auto _ : state) {
    kernels::matmul_serial(a.data(), b.data(), c.data(), m, n, k, false, false);
    benchmark::ClobberMemory();
  }
}

void bm_matmul_omp(benchmark::State& state) {
  const int m = 64, k = 208, n = 256;
  const auto a = random_vec(static_cast<size_t>(m) * k, 1);
  const auto b = random_vec(static_cast<size_t>(k) * n, 2);
  std::vector<double> c(static_cast<size_t>(m) * n);
  for (auto _ : state) {
    kernels::matmul(a.data(), b.data(), c.data(), m, n, k, false, false);
    benchmark::ClobberMemory();
  }
}

void bm_conv2d_serial(benchmark::State& state) {
  const int cin = 16, h = 32, w = 32, cout = 32;  // second backbone stage
  const auto x = random_vec(static_cast<size_t>(cin) * h * w, 3);
  const auto wt = random_vec(static_cast<size_t>(cout) * cin * 9, 4);
  const auto b = random_vec(cout, 5);
  std::vector<double> y(static_cast<size_t>(cout) * (h / 2) * (w / 2));
  for (auto _ : state) {
    kernels::conv2d_serial(x.data(), wt.data(), b.data(), y.data(), cin, h, w, cout, 3, 3, 2, 1);
    benchmark::ClobberMemory();
  }
}

void bm_conv2d_omp(benchmark::State& state) {
  const int cin = 16, h = 32, w = 32, cout = 32;
  const auto x = random_vec(static_cast<size_t>(cin) * h * w, 3);
  const auto wt = random_vec(static_cast<size_t>(cout) * cin * 9, 4);
  const auto b = random_vec(cout, 5);
  std::vector<double> y(static_cast<size_t>(cout) * (h / 2) * (w / 2));
  for (auto _ : state) {
    kernels::conv2d(x.data(), wt.data(), b.data(), y.data(), cin, h, w, cout, 3, 3, 2, 1);
    benchmark::ClobberMemory();
  }
}

void bm_conv2d_grad_weight_serial(benchmark::State& state) {
  const int cin = 16, h = 32, w = 32, cout = 32;
  const auto x = random_vec(static_cast<size_t>(cin) * h * w, 3);
  const auto gy = random_vec(static_cast<size_t>(cout) * (h / 2) * (w / 2), 6);
  std::vector<double> gw(static_cast<size_t>(cout) * cin * 9);
  for (auto _ : state) {
    kernels::conv2d_grad_weight_serial(gy.data(), x.data(), gw.data(), cin, h, w, cout, 3, 3, 2, 1);
    benchmark::ClobberMemory();
  }
}

void bm_conv2d_grad_weight_omp(benchmark::State& state) {
  const int cin = 16, h = 32, w = 32, cout = 32;
  const auto x = random_vec(static_cast<size_t>(cin) * h * w, 3);
  const auto gy = random_vec(static_cast<size_t>(cout) * (h / 2) * (w / 2), 6);
  std::vector<double> gw(static_cast<size_t>(cout) * cin * 9);
  for (auto _ : state) {
    kernels::conv2d_grad_weight(gy.data(), x.data(), gw.data(), cin, h, w, cout, 3, 3, 2, 1);
    benchmark::ClobberMemory();
  }
}

BENCHMARK(bm_matmul_serial);
BENCHMARK(bm_matmul_omp);
BENCHMARK(bm_conv2d_serial);
BENCHMARK(bm_conv2d_omp);
BENCHMARK(bm_conv2d_grad_weight_serial);
BENCHMARK(bm_conv2d_grad_weight_omp);

}  // namespace

BENCHMARK_MAIN();
