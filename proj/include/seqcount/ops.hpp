#pragma once

#include <vector>

#include "seqcount/tensor.hpp"

namespace seqcount::ad {

// Differentiable primitives. Shape contracts:
//   matmul            (m,k) x (k,n) -> (m,n)
//   conv2d            x (cin,h,w), w (cout,cin,kh,kw), bias (cout); zero pad
//   add, mul          same shape, or one operand a one-element tensor
//   tanh/sigmoid/exp  elementwise
//   log               elementwise; errors on non-positive values
//   sum, mean         full reduction to a scalar
//   concat            equal shapes except along `axis`
//   reshape           same element count; shares storage
//   upsample_nearest  (c,h,w) -> (c,oh,ow) nearest resize, either direction
//   softmax           1-D, max-subtraction stabilized
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor upsample_nearest(const Tensor& x, int out_h, int out_w);
Tensor softmax(const Tensor& x);

// Conveniences built on the primitives above.
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor sub(const Tensor& a, const Tensor& b);

enum class OpKind {
  matmul,
  conv2d,
  add,
  mul,
  tanh,
  sigmoid,
  exp,
  log,
  sum,
  mean,
  concat,
  reshape,
  upsample_nearest,
  softmax,
};

struct PrimitiveAttrs {
  int stride = 1;
  int pad = 0;
  int axis = 0;
  int out_h = 0;
  int out_w = 0;
  Shape new_shape;
};

// Uniform dispatcher over the primitive set (used by the per-op
// derivative property tests).
Tensor forward_primitive(OpKind kind, const std::vector<Tensor>& inputs,
                         const PrimitiveAttrs& attrs = {});
const char* op_kind_name(OpKind kind);

}  // namespace seqcount::ad
