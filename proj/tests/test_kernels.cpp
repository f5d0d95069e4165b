#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
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

// Textbook triple loop, independent of the production loop orders.
void matmul_ref(const std::vector<double>& a, const std::vector<double>& b,
                std::vector<double>& c, int m, int n, int k, bool ta, bool tb) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) {
        const double av = ta ? a[static_cast<size_t>(l) * m + i] : a[static_cast<size_t>(i) * k + l];
        const double bv = tb ? b[static_cast<size_t>(j) * k + l] : b[static_cast<size_t>(l) * n + j];
        s += av * bv;
      }
      c[static_cast<size_t>(i) * n + j] = s;
    }
}

}  // namespace

TEST_CASE("matmul matches the reference and the OpenMP path is bit-identical") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const int m = rng.uniform_int(1, 40), n = rng.uniform_int(1, 40), k = rng.uniform_int(1, 40);
    for (int mode = 0; mode < 3; ++mode) {
      const bool ta = mode == 1, tb = mode == 2;
      const auto a = random_vec(static_cast<size_t>(m) * k, trial * 7 + mode);
      const auto b = random_vec(static_cast<size_t>(k) * n, trial * 7 + mode + 3);
      std::vector<double> serial(static_cast<size_t>(m) * n), omp(serial.size()), ref(serial.size());
      kernels::matmul_serial(a.data(), b.data(), serial.data(), m, n, k, ta, tb);
      kernels::matmul(a.data(), b.data(), omp.data(), m, n, k, ta, tb);
      matmul_ref(a, b, ref, m, n, k, ta, tb);
      for (size_t i = 0; i < ref.size(); ++i) {
        CHECK(serial[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        CHECK(omp[i] == serial[i]);  // bit-exact
      }
    }
  }
}

TEST_CASE("conv2d serial and OpenMP kernels are bit-identical") {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(200 + trial);
    const int cin = rng.uniform_int(1, 5), cout = rng.uniform_int(1, 6);
    const int h = 2 * rng.uniform_int(2, 8), w = 2 * rng.uniform_int(2, 8);
    const int stride = rng.uniform_int(1, 2), pad = 1, kh = 3, kw = 3;
    if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0) continue;
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;

    const auto x = random_vec(static_cast<size_t>(cin) * h * w, trial);
    const auto wt = random_vec(static_cast<size_t>(cout) * cin * kh * kw, trial + 1);
    const auto b = random_vec(cout, trial + 2);
    std::vector<double> ys(static_cast<size_t>(cout) * oh * ow), yp(ys.size());
    kernels::conv2d_serial(x.data(), wt.data(), b.data(), ys.data(), cin, h, w, cout, kh, kw, stride, pad);
    kernels::conv2d(x.data(), wt.data(), b.data(), yp.data(), cin, h, w, cout, kh, kw, stride, pad);
    CHECK(ys == yp);

    const auto gy = random_vec(ys.size(), trial + 3);
    std::vector<double> gxs(x.size(), 0.0), gxp(x.size(), 0.0);
    kernels::conv2d_grad_input_serial(gy.data(), wt.data(), gxs.data(), cin, h, w, cout, kh, kw, stride, pad);
    kernels::conv2d_grad_input(gy.data(), wt.data(), gxp.data(), cin, h, w, cout, kh, kw, stride, pad);
    CHECK(gxs == gxp);

    std::vector<double> gws(wt.size(), 0.0), gwp(wt.size(), 0.0);
    kernels::conv2d_grad_weight_serial(gy.data(), x.data(), gws.data(), cin, h, w, cout, kh, kw, stride, pad);
    kernels::conv2d_grad_weight(gy.data(), x.data(), gwp.data(), cin, h, w, cout, kh, kw, stride, pad);
    CHECK(gws == gwp);
  }
}

TEST_CASE("conv2d forward matches a hand-rolled direct convolution") {
  const int cin = 2, h = 6, w = 6, cout = 3, stride = 2, pad = 1;
  const auto x = random_vec(static_cast<size_t>(cin) * h * w, 42);
  const auto wt = random_vec(static_cast<size_t>(cout) * cin * 9, 43);
  const auto b = random_vec(cout, 44);
  const int oh = (h + 2 * pad - 3) / stride + 1, ow = (w + 2 * pad - 3) / stride + 1;
  std::vector<double> y(static_cast<size_t>(cout) * oh * ow);
  kernels::conv2d_serial(x.data(), wt.data(), b.data(), y.data(), cin, h, w, cout, 3, 3, stride, pad);

  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double s = b[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += x[(static_cast<size_t>(ci) * h + iy) * w + ix] *
                   wt[((static_cast<size_t>(co) * cin + ci) * 3 + ky) * 3 + kx];
            }
        CHECK(y[(static_cast<size_t>(co) * oh + oy) * ow + ox] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("resize_nearest handles both directions and its grad is the adjoint") {
  // Upsample 2x2 -> 4x4 repeats each source cell in a 2x2 block.
  const std::vector<double> x = {1, 2, 3, 4};
  std::vector<double> y(16);
  kernels::resize_nearest(x.data(), y.data(), 1, 2, 2, 4, 4);
  const std::vector<double> expect = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(y == expect);

  // Downsample 4x4 -> 2x2 picks rows/cols 0 and 2.
  std::vector<double> big(16);
  for (int i = 0; i < 16; ++i) big[i] = i;
  std::vector<double> small(4);
  kernels::resize_nearest(big.data(), small.data(), 1, 4, 4, 2, 2);
  CHECK(small == std::vector<double>{0, 2, 8, 10});

  // Adjoint identity <resize(x), gy> == <x, resize_grad(gy)>.
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(300 + trial);
    const int c = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
    const int oh = rng.uniform_int(1, 9), ow = rng.uniform_int(1, 9);
    const auto xs = random_vec(static_cast<size_t>(c) * h * w, trial);
    const auto gy = random_vec(static_cast<size_t>(c) * oh * ow, trial + 50);
    std::vector<double> ys(gy.size());
    kernels::resize_nearest(xs.data(), ys.data(), c, h, w, oh, ow);
    std::vector<double> gx(xs.size(), 0.0);
    kernels::resize_nearest_grad(gy.data(), gx.data(), c, h, w, oh, ow);
    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < ys.size(); ++i) lhs += ys[i] * gy[i];
    for (size_t i = 0; i < xs.size(); ++i) rhs += xs[i] * gx[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}
