#include "seqcount/decoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace seqcount {

namespace {

ad::Tensor xavier(ad::Shape shape, long fan_in, long fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  ad::Tensor t = ad::Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (long i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-s, s);
  return t;
}

ad::Tensor col(const ad::Tensor& v) { return ad::reshape(v, {v.shape()[0], 1}); }

ad::Tensor vec(const ad::Tensor& c) { return ad::reshape(c, {c.shape()[0]}); }

// W_x x + W_h h + b as a (hidden) vector.
ad::Tensor gate_preact(const ad::Tensor& wx, const ad::Tensor& x_col, const ad::Tensor& wh,
                       const ad::Tensor& h_col, const ad::Tensor& b) {
  return ad::add(vec(ad::add(ad::matmul(wx, x_col), ad::matmul(wh, h_col))), b);
}

}  // namespace

DecoderParams init_decoder(const ModelDims& dims, int dim, Rng& rng) {
  DecoderParams p;
  p.attn_dim = dims.attn_dim;
  p.hidden_dim = dims.hidden_dim;
  p.input_dim = dims.input_dim;
  p.embed_dim = dims.embed_dim;
  p.max_ways = dims.max_ways;
  const int a = p.attn_dim, hd = p.hidden_dim, in = p.input_dim, e = p.embed_dim;

  p.w_h = xavier({a, hd}, hd, a, rng);
  p.w_f = xavier({a, dim}, dim, a, rng);
  p.v = xavier({a}, a, 1, rng);
  p.w_k = xavier({in, dim}, dim, in, rng);
  p.w_c = xavier({in, p.max_ways + 1}, p.max_ways + 1, in, rng);

  auto gate = [&](ad::Tensor& wx, ad::Tensor& wh, ad::Tensor& b, double bias_init) {
    wx = xavier({hd, in}, in, hd, rng);
    wh = xavier({hd, hd}, hd, hd, rng);
    b = ad::Tensor::full({hd}, bias_init, /*requires_grad=*/true);
  };
  gate(p.w_xi, p.w_hi, p.b_i, 0.0);
  gate(p.w_xf, p.w_hf, p.b_f, 1.0);  // open forget gate at init
  gate(p.w_xg, p.w_hg, p.b_g, 0.0);
  gate(p.w_xo, p.w_ho, p.b_o, 0.0);

  p.w_q = xavier({e, hd}, hd, e, rng);
  p.b_q = ad::Tensor::zeros({e}, /*requires_grad=*/true);
  return p;
}

DecoderState initial_state(const DecoderParams& params, int ways) {
  if (ways < 1 || ways > params.max_ways)
    throw std::invalid_argument("initial_state: ways " + std::to_string(ways) +
                                " outside 1.." + std::to_string(params.max_ways));
  DecoderState s;
  s.h = ad::Tensor::zeros({params.hidden_dim});
  s.cell = ad::Tensor::zeros({params.hidden_dim});
  s.prev_scores = ad::Tensor::zeros({params.max_ways + 1});
  const double u = 1.0 / static_cast<double>(ways + 1);
  for (int c = 0; c < ways; ++c) s.prev_scores.data()[c] = u;
  s.prev_scores.data()[params.max_ways] = u;  // background slot
  return s;
}

ad::Tensor attention_step(const FeatureMap& f, const DecoderState& state,
                          const DecoderParams& params) {
  if (state.h.shape()[0] != params.hidden_dim || f.dim != params.w_f.shape()[1])
    throw std::invalid_argument("attention_step: state/feature dims do not match params");
  const int n = f.grid_h * f.grid_w;
  ad::Tensor wh_h = ad::matmul(params.w_h, col(state.h));          // (a,1)
  ad::Tensor ones = ad::Tensor::full({1, n}, 1.0);
  ad::Tensor broadcast = ad::matmul(wh_h, ones);                   // (a,n)
  ad::Tensor act = ad::tanh(ad::add(broadcast, ad::matmul(params.w_f, f.cells)));
  ad::Tensor e = ad::matmul(ad::reshape(params.v, {1, params.attn_dim}), act);
  return ad::softmax(ad::reshape(e, {n}));
}

ad::Tensor pool_attention(const FeatureMap& f, const ad::Tensor& alpha) {
  const int n = f.grid_h * f.grid_w;
  if (alpha.numel() != n)
    throw std::invalid_argument("pool_attention: alpha " + ad::shape_str(alpha.shape()) +
                                " does not cover " + std::to_string(n) + " cells");
  double total = 0.0;
  for (long i = 0; i < alpha.numel(); ++i) total += alpha[i];
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("pool_attention: alpha sums to " + std::to_string(total) +
                                ", not a probability grid");
  return vec(ad::matmul(f.cells, ad::reshape(alpha, {n, 1})));
}

namespace {

// Places active scores (C foreground + background) into the padded
// (max_ways+1) layout via a constant selection matrix, keeping the
// background in the fixed last slot.
ad::Tensor pad_scores(const ad::Tensor& scores, int ways, int max_ways) {
  ad::Tensor placement = ad::Tensor::zeros({max_ways + 1, ways + 1});
  for (int c = 0; c < ways; ++c)
    placement.data()[static_cast<long>(c) * (ways + 1) + c] = 1.0;
  placement.data()[static_cast<long>(max_ways) * (ways + 1) + ways] = 1.0;
  return vec(ad::matmul(placement, col(scores)));
}

}  // namespace

StepResult decoder_step(const FeatureMap& f, const DecoderState& state,
                        const PrototypeBank& bank, const DecoderParams& params) {
  if (bank.ways < 1) throw std::invalid_argument("decoder_step: empty prototype bank");

  StepResult r;
  r.alpha = attention_step(f, state, params);
  ad::Tensor k = pool_attention(f, r.alpha);

  ad::Tensor x = vec(ad::add(ad::matmul(params.w_k, col(k)),
                             ad::matmul(params.w_c, col(state.prev_scores))));
  ad::Tensor x_col = col(x), h_col = col(state.h);
  ad::Tensor gi = ad::sigmoid(gate_preact(params.w_xi, x_col, params.w_hi, h_col, params.b_i));
  ad::Tensor gf = ad::sigmoid(gate_preact(params.w_xf, x_col, params.w_hf, h_col, params.b_f));
  ad::Tensor gg = ad::tanh(gate_preact(params.w_xg, x_col, params.w_hg, h_col, params.b_g));
  ad::Tensor go = ad::sigmoid(gate_preact(params.w_xo, x_col, params.w_ho, h_col, params.b_o));
  ad::Tensor cell = ad::add(ad::mul(gf, state.cell), ad::mul(gi, gg));
  ad::Tensor h = ad::mul(go, ad::tanh(cell));

  // LSTM output embedded into the score space shared with the prototypes.
  ad::Tensor u = ad::add(vec(ad::matmul(params.w_q, col(h))), params.b_q);
  ad::Tensor logits = vec(ad::matmul(bank.embedded, col(u)));
  r.scores = ad::softmax(logits);

  r.state.h = h;
  r.state.cell = cell;
  r.state.prev_scores = pad_scores(r.scores, bank.ways, params.max_ways);
  return r;
}

DecodeTrace decode_train(const FeatureMap& f, const PrototypeBank& bank,
                         const DecoderParams& params, int steps) {
  if (steps < 1) throw std::invalid_argument("decode_train: steps must be >= 1");
  DecodeTrace trace;
  DecoderState state = initial_state(params, bank.ways);
  for (int t = 0; t < steps; ++t) {
    StepResult r = decoder_step(f, state, bank, params);
    trace.alphas.push_back(r.alpha);
    trace.scores.push_back(r.scores);
    state = std::move(r.state);
  }
  return trace;
}

std::vector<Prediction> decode_infer(const FeatureMap& f, const PrototypeBank& bank,
                                     const DecoderParams& params, int t_max) {
  if (t_max < 1) throw std::invalid_argument("decode_infer: t_max must be >= 1");
  ad::NoGradGuard no_grad;
  std::vector<Prediction> out;
  DecoderState state = initial_state(params, bank.ways);
  for (int t = 0; t < t_max; ++t) {
    StepResult r = decoder_step(f, state, bank, params);
    int best = 0;
    for (int c = 1; c <= bank.ways; ++c)
      if (r.scores[c] > r.scores[best]) best = c;
    if (best == bank.ways) break;  // background: sequence finished
    long cell = 0;
    for (long i = 1; i < r.alpha.numel(); ++i)
      if (r.alpha[i] > r.alpha[cell]) cell = i;
    out.push_back({static_cast<int>(cell / f.grid_w) * 4, static_cast<int>(cell % f.grid_w) * 4, best});
    state = std::move(r.state);
  }
  return out;
}

PrototypeBank build_prototypes_attention(const std::vector<SupportItem>& support, int ways,
                                         const DecoderParams& params, const EmbedParams& embed) {
  if (support.empty()) throw std::invalid_argument("build_prototypes_attention: no support images");
  const int dim = support[0].features.dim;

  std::vector<std::vector<ad::Tensor>> per_class(ways);
  ad::Tensor bg_acc;
  for (const SupportItem& item : support) {
    DecoderState state = initial_state(params, ways);
    const ad::Tensor frozen_scores = state.prev_scores;
    for (const auto& label : item.labels) {
      ad::Tensor alpha = attention_step(item.features, state, params);
      ad::Tensor k = pool_attention(item.features, alpha);
      if (label.cls < 0 || label.cls >= ways)
        throw std::invalid_argument("build_prototypes_attention: label class " +
                                    std::to_string(label.cls) + " outside task");
      per_class[label.cls].push_back(k);

      // Advance the recurrence on the pooled vector; the score feedback
      // stays at its neutral initial value (no prototypes exist yet).
      ad::Tensor x = vec(ad::add(ad::matmul(params.w_k, col(k)),
                                 ad::matmul(params.w_c, col(frozen_scores))));
      ad::Tensor x_col = col(x), h_col = col(state.h);
      ad::Tensor gi = ad::sigmoid(gate_preact(params.w_xi, x_col, params.w_hi, h_col, params.b_i));
      ad::Tensor gf = ad::sigmoid(gate_preact(params.w_xf, x_col, params.w_hf, h_col, params.b_f));
      ad::Tensor gg = ad::tanh(gate_preact(params.w_xg, x_col, params.w_hg, h_col, params.b_g));
      ad::Tensor go = ad::sigmoid(gate_preact(params.w_xo, x_col, params.w_ho, h_col, params.b_o));
      state.cell = ad::add(ad::mul(gf, state.cell), ad::mul(gi, gg));
      state.h = ad::mul(go, ad::tanh(state.cell));
    }
    const long n = static_cast<long>(item.features.grid_h) * item.features.grid_w;
    ad::Tensor uniform = ad::Tensor::full({item.features.grid_h, item.features.grid_w},
                                          1.0 / static_cast<double>(n));
    ad::Tensor pooled = pool_by_map(item.features, uniform);
    bg_acc = bg_acc.defined() ? ad::add(bg_acc, pooled) : pooled;
  }

  std::vector<ad::Tensor> rows;
  for (int c = 0; c < ways; ++c) {
    if (per_class[c].empty())
      throw std::invalid_argument("build_prototypes_attention: class " + std::to_string(c) +
                                  " has no support instances");
    ad::Tensor acc = per_class[c][0];
    for (size_t i = 1; i < per_class[c].size(); ++i) acc = ad::add(acc, per_class[c][i]);
    rows.push_back(ad::reshape(ad::scale(acc, 1.0 / static_cast<double>(per_class[c].size())),
                               {1, dim}));
  }
  rows.push_back(ad::reshape(ad::scale(bg_acc, 1.0 / static_cast<double>(support.size())), {1, dim}));

  PrototypeBank bank;
  bank.ways = ways;
  bank.raw = ad::concat(rows, /*axis=*/0);
  bank.embedded = embed_rows(bank.raw, embed);
  return bank;
}

}  // namespace seqcount
