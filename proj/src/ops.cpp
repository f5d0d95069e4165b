#include "seqcount/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "seqcount/kernels.hpp"

namespace seqcount::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                              " vs " + shape_str(b));
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

using BackwardFn = std::function<void(Graph&, const Graph::Node&, const std::vector<double>&)>;

void maybe_record(const char* op, Tensor& out,
                  std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  if (!Graph::recording() || !any_requires_grad(inputs)) return;
  Graph& g = *Graph::active();
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Tensor* t : inputs) ids.push_back(g.ensure_node(*t));
  g.record(op, out, std::move(ids), std::move(backward));
}

// Shared value buffers captured by backward closures.
using Values = std::shared_ptr<const std::vector<double>>;
Values capture(const Tensor& t) { return t.storage(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    shape_error("matmul", a.shape(), b.shape());
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  kernels::matmul(a.data(), b.data(), out.data(), m, n, k, false, false);
  auto av = capture(a), bv = capture(b);
  maybe_record("matmul", out, {&a, &b},
               [av, bv, m, n, k](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
                 // gA = G * B^T, gB = A^T * G
                 std::vector<double> ga(static_cast<size_t>(m) * k);
                 std::vector<double> gb(static_cast<size_t>(k) * n);
                 kernels::matmul(go.data(), bv->data(), ga.data(), m, k, n, false, true);
                 kernels::matmul(av->data(), go.data(), gb.data(), k, n, m, true, false);
                 auto& ga_acc = g.grad_buffer(node.inputs[0]);
                 for (size_t i = 0; i < ga.size(); ++i) ga_acc[i] += ga[i];
                 auto& gb_acc = g.grad_buffer(node.inputs[1]);
                 for (size_t i = 0; i < gb.size(); ++i) gb_acc[i] += gb[i];
               });
  return out;
}

namespace {

Tensor conv2d_impl(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
  if (x.shape().size() != 3 || w.shape().size() != 4 || x.shape()[0] != w.shape()[1])
    shape_error("conv2d", x.shape(), w.shape());
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != w.shape()[0]))
    shape_error("conv2d(bias)", w.shape(), bias->shape());
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int cin = x.shape()[0], h = x.shape()[1], ww = x.shape()[2];
  const int cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (h + 2 * pad < kh || ww + 2 * pad < kw)
    throw std::invalid_argument("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                                shape_str(w.shape()) + " stride " + std::to_string(stride) +
                                " pad " + std::to_string(pad));
  // Floor semantics: trailing rows/columns that no window reaches are
  // dropped, so k=3 s=2 p=1 exactly halves even sizes.
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  Tensor out = Tensor::zeros({cout, oh, ow});
  kernels::conv2d(x.data(), w.data(), bias ? bias->data() : nullptr, out.data(),
                  cin, h, ww, cout, kh, kw, stride, pad);
  auto xv = capture(x), wv = capture(w);
  auto backward = [xv, wv, cin, h, ww, cout, kh, kw, oh, ow, stride, pad, has_bias = bias != nullptr](
                      Graph& g, const Graph::Node& node, const std::vector<double>& go) {
    kernels::conv2d_grad_input(go.data(), wv->data(), g.grad_buffer(node.inputs[0]).data(),
                               cin, h, ww, cout, kh, kw, stride, pad);
    kernels::conv2d_grad_weight(go.data(), xv->data(), g.grad_buffer(node.inputs[1]).data(),
                                cin, h, ww, cout, kh, kw, stride, pad);
    if (has_bias)
      kernels::conv2d_grad_bias(go.data(), g.grad_buffer(node.inputs[2]).data(), cout, oh, ow);
  };
  if (bias)
    maybe_record("conv2d", out, {&x, &w, bias}, backward);
  else
    maybe_record("conv2d", out, {&x, &w}, backward);
  return out;
}

// Elementwise binary op with one-element broadcast on either side.
template <typename Fwd>
Tensor broadcast_binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                        BackwardFn backward_same, BackwardFn backward_a_scalar,
                        BackwardFn backward_b_scalar) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) shape_error(name, a.shape(), b.shape());
  const Tensor& big = a_scalar ? b : a;
  Tensor out = Tensor::zeros(big.shape());
  const long n = big.numel();
  for (long i = 0; i < n; ++i)
    out.data()[i] = fwd(a_scalar ? a[0] : a[i], b_scalar ? b[0] : b[i]);
  maybe_record(name, out, {&a, &b},
               a_scalar ? std::move(backward_a_scalar)
                        : (b_scalar ? std::move(backward_b_scalar) : std::move(backward_same)));
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  return conv2d_impl(x, w, &bias, stride, pad);
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  return conv2d_impl(x, w, nullptr, stride, pad);
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto same = [](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
    auto& ga = g.grad_buffer(node.inputs[0]);
    auto& gb = g.grad_buffer(node.inputs[1]);
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  };
  auto a_scalar = [](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
    double s = 0.0;
    auto& gb = g.grad_buffer(node.inputs[1]);
    for (size_t i = 0; i < go.size(); ++i) {
      s += go[i];
      gb[i] += go[i];
    }
    g.grad_buffer(node.inputs[0])[0] += s;
  };
  auto b_scalar = [](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
    double s = 0.0;
    auto& ga = g.grad_buffer(node.inputs[0]);
    for (size_t i = 0; i < go.size(); ++i) {
      s += go[i];
      ga[i] += go[i];
    }
    g.grad_buffer(node.inputs[1])[0] += s;
  };
  return broadcast_binary("add", a, b, [](double x, double y) { return x + y; },
                          same, a_scalar, b_scalar);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto av = capture(a), bv = capture(b);
  auto same = [av, bv](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
    auto& ga = g.grad_buffer(node.inputs[0]);
    auto& gb = g.grad_buffer(node.inputs[1]);
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i] * (*bv)[i];
      gb[i] += go[i] * (*av)[i];
    }
  };
  auto a_scalar = [av, bv](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
    double s = 0.0;
    auto& gb = g.grad_buffer(node.inputs[1]);
    const double a0 = (*av)[0];
    for (size_t i = 0; i < go.size(); ++i) {
      s += go[i] * (*bv)[i];
      gb[i] += go[i] * a0;
    }
    g.grad_buffer(node.inputs[0])[0] += s;
  };
  auto b_scalar = [av, bv](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
    double s = 0.0;
    auto& ga = g.grad_buffer(node.inputs[0]);
    const double b0 = (*bv)[0];
    for (size_t i = 0; i < go.size(); ++i) {
      s += go[i] * (*av)[i];
      ga[i] += go[i] * b0;
    }
    g.grad_buffer(node.inputs[1])[0] += s;
  };
  return broadcast_binary("mul", a, b, [](double x, double y) { return x * y; },
                          same, a_scalar, b_scalar);
}

namespace {

template <typename Fwd, typename Grad>
Tensor unary_elementwise(const char* name, const Tensor& x, Fwd fwd, Grad grad_from_out) {
  Tensor out = Tensor::zeros(x.shape());
  const long n = x.numel();
  for (long i = 0; i < n; ++i) out.data()[i] = fwd(x[i]);
  auto ov = capture(out);
  auto xv = capture(x);
  maybe_record(name, out, {&x},
               [ov, xv, grad_from_out](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
                 auto& gx = g.grad_buffer(node.inputs[0]);
                 for (size_t i = 0; i < go.size(); ++i)
                   gx[i] += go[i] * grad_from_out((*ov)[i], (*xv)[i]);
               });
  return out;
}

}  // namespace

Tensor tanh(const Tensor& x) {
  return unary_elementwise("tanh", x, [](double v) { return std::tanh(v); },
                           [](double y, double) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise("sigmoid", x,
                           [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                           [](double y, double) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary_elementwise("exp", x, [](double v) { return std::exp(v); },
                           [](double y, double) { return y; });
}

Tensor log(const Tensor& x) {
  for (long i = 0; i < x.numel(); ++i)
    if (!(x[i] > 0.0))
      throw std::domain_error("log: non-positive value " + std::to_string(x[i]) +
                              " at index " + std::to_string(i));
  return unary_elementwise("log", x, [](double v) { return std::log(v); },
                           [](double, double v) { return 1.0 / v; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (long i = 0; i < x.numel(); ++i) s += x[i];
  Tensor out = Tensor::scalar(s);
  maybe_record("sum", out, {&x},
               [](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
                 auto& gx = g.grad_buffer(node.inputs[0]);
                 for (auto& v : gx) v += go[0];
               });
  return out;
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  const long n = x.numel();
  for (long i = 0; i < n; ++i) s += x[i];
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  maybe_record("mean", out, {&x},
               [n](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
                 const double gi = go[0] / static_cast<double>(n);
                 auto& gx = g.grad_buffer(node.inputs[0]);
                 for (auto& v : gx) v += gi;
               });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis " + std::to_string(axis));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (static_cast<int>(p.shape().size()) != rank) shape_error("concat", first, p.shape());
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.shape()[d] != first[d]) shape_error("concat", first, p.shape());
    out_shape[axis] += p.shape()[axis];
  }
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (int d = axis + 1; d < rank; ++d) inner *= first[d];

  Tensor out = Tensor::zeros(out_shape);
  std::vector<long> blocks;  // per-part contiguous block size within one outer slice
  blocks.reserve(parts.size());
  for (const Tensor& p : parts) blocks.push_back(static_cast<long>(p.shape()[axis]) * inner);
  const long out_block = static_cast<long>(out_shape[axis]) * inner;
  long offset = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const double* src = parts[pi].data();
    for (long o = 0; o < outer; ++o)
      std::copy(src + o * blocks[pi], src + (o + 1) * blocks[pi],
                out.data() + o * out_block + offset);
    offset += blocks[pi];
  }

  bool needs_grad = false;
  for (const Tensor& p : parts) needs_grad |= p.requires_grad();
  if (Graph::recording() && needs_grad) {
    Graph& g = *Graph::active();
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const Tensor& p : parts) ids.push_back(g.ensure_node(p));
    g.record("concat", out, std::move(ids),
             [blocks, outer, out_block](Graph& gg, const Graph::Node& node,
                                        const std::vector<double>& go) {
               long off = 0;
               for (size_t pi = 0; pi < node.inputs.size(); ++pi) {
                 auto& gp = gg.grad_buffer(node.inputs[pi]);
                 for (long o = 0; o < outer; ++o) {
                   const double* src = go.data() + o * out_block + off;
                   double* dst = gp.data() + o * blocks[pi];
                   for (long i = 0; i < blocks[pi]; ++i) dst[i] += src[i];
                 }
                 off += blocks[pi];
               }
             });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel_of(new_shape) != x.numel())
    shape_error("reshape", x.shape(), new_shape);
  Tensor out = Tensor::sharing(std::move(new_shape), x.storage());
  maybe_record("reshape", out, {&x},
               [](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
                 auto& gx = g.grad_buffer(node.inputs[0]);
                 for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
               });
  return out;
}

Tensor upsample_nearest(const Tensor& x, int out_h, int out_w) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("upsample_nearest: expected (c,h,w), got " + shape_str(x.shape()));
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("upsample_nearest: bad target size");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor out = Tensor::zeros({c, out_h, out_w});
  kernels::resize_nearest(x.data(), out.data(), c, h, w, out_h, out_w);
  maybe_record("upsample_nearest", out, {&x},
               [c, h, w, out_h, out_w](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
                 kernels::resize_nearest_grad(go.data(), g.grad_buffer(node.inputs[0]).data(),
                                              c, h, w, out_h, out_w);
               });
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.shape().size() != 1)
    throw std::invalid_argument("softmax: expected 1-D, got " + shape_str(x.shape()));
  const long n = x.numel();
  double mx = x[0];
  for (long i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  Tensor out = Tensor::zeros(x.shape());
  double z = 0.0;
  for (long i = 0; i < n; ++i) {
    out.data()[i] = std::exp(x[i] - mx);
    z += out.data()[i];
  }
  for (long i = 0; i < n; ++i) out.data()[i] /= z;
  auto ov = capture(out);
  maybe_record("softmax", out, {&x},
               [ov](Graph& g, const Graph::Node& node, const std::vector<double>& go) {
                 double dot = 0.0;
                 for (size_t i = 0; i < go.size(); ++i) dot += go[i] * (*ov)[i];
                 auto& gx = g.grad_buffer(node.inputs[0]);
                 for (size_t i = 0; i < go.size(); ++i) gx[i] += (*ov)[i] * (go[i] - dot);
               });
  return out;
}

Tensor scale(const Tensor& x, double s) { return mul(x, Tensor::scalar(s)); }

Tensor add_scalar(const Tensor& x, double s) { return add(x, Tensor::scalar(s)); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::concat: return "concat";
    case OpKind::reshape: return "reshape";
    case OpKind::upsample_nearest: return "upsample_nearest";
    case OpKind::softmax: return "softmax";
  }
  return "?";
}

Tensor forward_primitive(OpKind kind, const std::vector<Tensor>& inputs,
                         const PrimitiveAttrs& attrs) {
  auto want = [&](size_t n) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string(op_kind_name(kind)) + ": expected " +
                                  std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
  };
  switch (kind) {
    case OpKind::matmul: want(2); return matmul(inputs[0], inputs[1]);
    case OpKind::conv2d:
      if (inputs.size() == 3) return conv2d(inputs[0], inputs[1], inputs[2], attrs.stride, attrs.pad);
      want(2);
      return conv2d(inputs[0], inputs[1], attrs.stride, attrs.pad);
    case OpKind::add: want(2); return add(inputs[0], inputs[1]);
    case OpKind::mul: want(2); return mul(inputs[0], inputs[1]);
    case OpKind::tanh: want(1); return tanh(inputs[0]);
    case OpKind::sigmoid: want(1); return sigmoid(inputs[0]);
    case OpKind::exp: want(1); return exp(inputs[0]);
    case OpKind::log: want(1); return log(inputs[0]);
    case OpKind::sum: want(1); return sum(inputs[0]);
    case OpKind::mean: want(1); return mean(inputs[0]);
    case OpKind::concat: return concat(inputs, attrs.axis);
    case OpKind::reshape: want(1); return reshape(inputs[0], attrs.new_shape);
    case OpKind::upsample_nearest: want(1); return upsample_nearest(inputs[0], attrs.out_h, attrs.out_w);
    case OpKind::softmax: want(1); return softmax(inputs[0]);
  }
  throw std::invalid_argument("unknown primitive");
}

}  // namespace seqcount::ad
