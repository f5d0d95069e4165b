#include "seqcount/kernels.hpp"

#include <cassert>
#include <cstring>

namespace seqcount::kernels {

namespace {

// Row i of C for the nn case: C[i,:] += A[i,:] * B.
inline void matmul_row_nn(const double* a, const double* b, double* c,
                          int i, int n, int k) {
  double* ci = c + static_cast<long>(i) * n;
  std::memset(ci, 0, sizeof(double) * n);
  const double* ai = a + static_cast<long>(i) * k;
  for (int l = 0; l < k; ++l) {
    const double s = ai[l];
    const double* bl = b + static_cast<long>(l) * n;
    for (int j = 0; j < n; ++j) ci[j] += s * bl[j];
  }
}

inline void matmul_row_nt(const double* a, const double* b, double* c,
                          int i, int n, int k) {
  double* ci = c + static_cast<long>(i) * n;
  const double* ai = a + static_cast<long>(i) * k;
  for (int j = 0; j < n; ++j) {
    const double* bj = b + static_cast<long>(j) * k;
    double s = 0.0;
    for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
    ci[j] = s;
  }
}

inline void matmul_row_tn(const double* a, const double* b, double* c,
                          int i, int m, int n, int k) {
  double* ci = c + static_cast<long>(i) * n;
  std::memset(ci, 0, sizeof(double) * n);
  for (int l = 0; l < k; ++l) {
    const double s = a[static_cast<long>(l) * m + i];
    const double* bl = b + static_cast<long>(l) * n;
    for (int j = 0; j < n; ++j) ci[j] += s * bl[j];
  }
}

inline void conv2d_out_cell(const double* x, const double* w, const double* bias,
                            double* y, int cin, int h, int ww, int kh, int kw,
                            int stride, int pad, int co, int oy, int ox, int ow) {
  double s = bias ? bias[co] : 0.0;
  for (int ci = 0; ci < cin; ++ci) {
    const double* xc = x + static_cast<long>(ci) * h * ww;
    const double* wc = w + ((static_cast<long>(co) * cin + ci) * kh) * kw;
    for (int ky = 0; ky < kh; ++ky) {
      const int iy = oy * stride - pad + ky;
      if (iy < 0 || iy >= h) continue;
      for (int kx = 0; kx < kw; ++kx) {
        const int ix = ox * stride - pad + kx;
        if (ix < 0 || ix >= ww) continue;
        s += xc[static_cast<long>(iy) * ww + ix] * wc[ky * kw + kx];
      }
    }
  }
  y[(static_cast<long>(co) * ((h + 2 * pad - kh) / stride + 1) + oy) * ow + ox] = s;
}

inline double conv2d_gx_cell(const double* gy, const double* w, int cin, int h,
                             int ww, int cout, int kh, int kw, int stride,
                             int pad, int oh, int ow, int ci, int iy, int ix) {
  (void)h;
  (void)ww;
  double s = 0.0;
  for (int co = 0; co < cout; ++co) {
    const double* gyc = gy + static_cast<long>(co) * oh * ow;
    const double* wc = w + ((static_cast<long>(co) * cin + ci) * kh) * kw;
    for (int ky = 0; ky < kh; ++ky) {
      const int num_y = iy + pad - ky;
      if (num_y < 0 || num_y % stride != 0) continue;
      const int oy = num_y / stride;
      if (oy >= oh) continue;
      for (int kx = 0; kx < kw; ++kx) {
        const int num_x = ix + pad - kx;
        if (num_x < 0 || num_x % stride != 0) continue;
        const int ox = num_x / stride;
        if (ox >= ow) continue;
        s += gyc[static_cast<long>(oy) * ow + ox] * wc[ky * kw + kx];
      }
    }
  }
  return s;
}

inline double conv2d_gw_cell(const double* gy, const double* x, int h, int ww,
                             int stride, int pad, int oh, int ow, int co,
                             int ci, int ky, int kx, int cin) {
  (void)cin;
  const double* gyc = gy + static_cast<long>(co) * oh * ow;
  const double* xc = x + static_cast<long>(ci) * h * ww;
  double s = 0.0;
  for (int oy = 0; oy < oh; ++oy) {
    const int iy = oy * stride - pad + ky;
    if (iy < 0 || iy >= h) continue;
    for (int ox = 0; ox < ow; ++ox) {
      const int ix = ox * stride - pad + kx;
      if (ix < 0 || ix >= ww) continue;
      s += gyc[static_cast<long>(oy) * ow + ox] * xc[static_cast<long>(iy) * ww + ix];
    }
  }
  return s;
}

}  // namespace

void matmul_serial(const double* a, const double* b, double* c,
                   int m, int n, int k, bool ta, bool tb) {
  assert(!(ta && tb));
  for (int i = 0; i < m; ++i) {
    if (!ta && !tb) matmul_row_nn(a, b, c, i, n, k);
    else if (tb) matmul_row_nt(a, b, c, i, n, k);
    else matmul_row_tn(a, b, c, i, m, n, k);
  }
}

void matmul(const double* a, const double* b, double* c,
            int m, int n, int k, bool ta, bool tb) {
  assert(!(ta && tb));
  if (!ta && !tb) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) matmul_row_nn(a, b, c, i, n, k);
  } else if (tb) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) matmul_row_nt(a, b, c, i, n, k);
  } else {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) matmul_row_tn(a, b, c, i, m, n, k);
  }
}

void conv2d_serial(const double* x, const double* w, const double* bias,
                   double* y, int cin, int h, int ww, int cout, int kh, int kw,
                   int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        conv2d_out_cell(x, w, bias, y, cin, h, ww, kh, kw, stride, pad, co, oy, ox, ow);
}

void conv2d(const double* x, const double* w, const double* bias,
            double* y, int cin, int h, int ww, int cout, int kh, int kw,
            int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        conv2d_out_cell(x, w, bias, y, cin, h, ww, kh, kw, stride, pad, co, oy, ox, ow);
}

void conv2d_grad_input_serial(const double* gy, const double* w, double* gx,
                              int cin, int h, int ww, int cout, int kh, int kw,
                              int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  for (int ci = 0; ci < cin; ++ci)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < ww; ++ix)
        gx[(static_cast<long>(ci) * h + iy) * ww + ix] +=
            conv2d_gx_cell(gy, w, cin, h, ww, cout, kh, kw, stride, pad, oh, ow, ci, iy, ix);
}

void conv2d_grad_input(const double* gy, const double* w, double* gx,
                       int cin, int h, int ww, int cout, int kh, int kw,
                       int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < cin; ++ci)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < ww; ++ix)
        gx[(static_cast<long>(ci) * h + iy) * ww + ix] +=
            conv2d_gx_cell(gy, w, cin, h, ww, cout, kh, kw, stride, pad, oh, ow, ci, iy, ix);
}

void conv2d_grad_weight_serial(const double* gy, const double* x, double* gw,
                               int cin, int h, int ww, int cout, int kh, int kw,
                               int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx)
          gw[((static_cast<long>(co) * cin + ci) * kh + ky) * kw + kx] +=
              conv2d_gw_cell(gy, x, h, ww, stride, pad, oh, ow, co, ci, ky, kx, cin);
}

void conv2d_grad_weight(const double* gy, const double* x, double* gw,
                        int cin, int h, int ww, int cout, int kh, int kw,
                        int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx)
          gw[((static_cast<long>(co) * cin + ci) * kh + ky) * kw + kx] +=
              conv2d_gw_cell(gy, x, h, ww, stride, pad, oh, ow, co, ci, ky, kx, cin);
}

void conv2d_grad_bias(const double* gy, double* gb, int cout, int oh, int ow) {
  for (int co = 0; co < cout; ++co) {
    const double* gyc = gy + static_cast<long>(co) * oh * ow;
    double s = 0.0;
    for (long i = 0; i < static_cast<long>(oh) * ow; ++i) s += gyc[i];
    gb[co] += s;
  }
}

void resize_nearest(const double* x, double* y, int c, int h, int w,
                    int oh, int ow) {
  for (int ch = 0; ch < c; ++ch) {
    const double* xc = x + static_cast<long>(ch) * h * w;
    double* yc = y + static_cast<long>(ch) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const int si = static_cast<int>(static_cast<long>(i) * h / oh);
      for (int j = 0; j < ow; ++j) {
        const int sj = static_cast<int>(static_cast<long>(j) * w / ow);
        yc[static_cast<long>(i) * ow + j] = xc[static_cast<long>(si) * w + sj];
      }
    }
  }
}

void resize_nearest_grad(const double* gy, double* gx, int c, int h, int w,
                         int oh, int ow) {
  // Gather form: source cell (y,x) receives grad from output rows i with
  // floor(i*h/oh) == y, i.e. i in [ceil(y*oh/h), ceil((y+1)*oh/h) - 1].
  auto begin_of = [](int s, int out, int in) {
    return static_cast<int>((static_cast<long>(s) * out + in - 1) / in);
  };
  for (int ch = 0; ch < c; ++ch) {
    const double* gyc = gy + static_cast<long>(ch) * oh * ow;
    double* gxc = gx + static_cast<long>(ch) * h * w;
    for (int y = 0; y < h; ++y) {
      const int i0 = begin_of(y, oh, h);
      const int i1 = begin_of(y + 1, oh, h);
      for (int x = 0; x < w; ++x) {
        const int j0 = begin_of(x, ow, w);
        const int j1 = begin_of(x + 1, ow, w);
        double s = 0.0;
        for (int i = i0; i < i1; ++i)
          for (int j = j0; j < j1; ++j) s += gyc[static_cast<long>(i) * ow + j];
        gxc[static_cast<long>(y) * w + x] += s;
      }
    }
  }
}

}  // namespace seqcount::kernels
