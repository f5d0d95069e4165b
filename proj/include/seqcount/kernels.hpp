#pragma once

namespace seqcount::kernels {

// Dense numeric kernels. Every kernel computes each output element as an
// independent serial reduction, so the OpenMP variants are bit-identical
// to the *_serial references for any thread count. The serial versions
// are kept for tests and benchmarks.

// C(m,n) = op(A) * op(B), all row-major.
//   ta=false, tb=false: A is (m,k), B is (k,n)
//   ta=false, tb=true : A is (m,k), B is (n,k)
//   ta=true,  tb=false: A is (k,m), B is (k,n)
// ta && tb is not supported.
void matmul_serial(const double* a, const double* b, double* c,
                   int m, int n, int k, bool ta, bool tb);
void matmul(const double* a, const double* b, double* c,
            int m, int n, int k, bool ta, bool tb);

// x: (cin,h,w), w: (cout,cin,kh,kw), bias: (cout) or nullptr, y: (cout,oh,ow)
// with oh = (h + 2*pad - kh)/stride + 1 (caller guarantees integral).
// Zero padding.
void conv2d_serial(const double* x, const double* w, const double* bias,
                   double* y, int cin, int h, int ww, int cout, int kh, int kw,
                   int stride, int pad);
void conv2d(const double* x, const double* w, const double* bias,
            double* y, int cin, int h, int ww, int cout, int kh, int kw,
            int stride, int pad);

// gy: (cout,oh,ow) -> gx: (cin,h,w), accumulated (+=).
void conv2d_grad_input_serial(const double* gy, const double* w, double* gx,
                              int cin, int h, int ww, int cout, int kh, int kw,
                              int stride, int pad);
void conv2d_grad_input(const double* gy, const double* w, double* gx,
                       int cin, int h, int ww, int cout, int kh, int kw,
                       int stride, int pad);

// gy: (cout,oh,ow), x: (cin,h,w) -> gw: (cout,cin,kh,kw), accumulated (+=).
void conv2d_grad_weight_serial(const double* gy, const double* x, double* gw,
                               int cin, int h, int ww, int cout, int kh, int kw,
                               int stride, int pad);
void conv2d_grad_weight(const double* gy, const double* x, double* gw,
                        int cin, int h, int ww, int cout, int kh, int kw,
                        int stride, int pad);

// gb[co] += sum over gy[co,:,:]
void conv2d_grad_bias(const double* gy, double* gb, int cout, int oh, int ow);

// Nearest-neighbour resize, per channel: y[c,i,j] = x[c, i*h/oh, j*w/ow].
// Works in both directions (up- and down-sampling).
void resize_nearest(const double* x, double* y, int c, int h, int w,
                    int oh, int ow);
// Adjoint of resize_nearest: gx += gather(gy), accumulated.
void resize_nearest_grad(const double* gy, double* gx, int c, int h, int w,
                         int oh, int ow);

}  // namespace seqcount::kernels
