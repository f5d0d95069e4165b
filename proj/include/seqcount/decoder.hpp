#pragma once

#include <vector>

#include "seqcount/backbone.hpp"
#include "seqcount/prototypes.hpp"

namespace seqcount {

// Attention scorer, LSTM input mixing, LSTM gates, and the query-side
// embedding. The class-score vector fed back into the LSTM input is
// padded to a fixed max_ways+1 width so w_c has one shape across tasks:
// entries 0..C-1 hold the class scores, the last entry holds the
// background score, the rest stay zero.
struct DecoderParams {
  ad::Tensor w_h;  // (attn, hidden)
  ad::Tensor w_f;  // (attn, dim)
  ad::Tensor v;    // (attn)
  ad::Tensor w_k;  // (input, dim)
  ad::Tensor w_c;  // (input, max_ways+1)
  // LSTM gates (input gate i, forget f, candidate g, output o).
  ad::Tensor w_xi, w_hi, b_i;
  ad::Tensor w_xf, w_hf, b_f;
  ad::Tensor w_xg, w_hg, b_g;
  ad::Tensor w_xo, w_ho, b_o;
  ad::Tensor w_q;  // (embed, hidden) query-side embedding
  ad::Tensor b_q;  // (embed)
  int attn_dim = 0, hidden_dim = 0, input_dim = 0, embed_dim = 0, max_ways = 0;
};

DecoderParams init_decoder(const ModelDims& dims, int dim, Rng& rng);

struct DecoderState {
  ad::Tensor h;            // (hidden)
  ad::Tensor cell;         // (hidden)
  ad::Tensor prev_scores;  // (max_ways+1), padded layout as above
};

// h = cell = 0; prev_scores uniform (1/(C+1)) over the C+1 active
// entries, zero on padding.
DecoderState initial_state(const DecoderParams& params, int ways);

// softmax over all cells of v' tanh(W_h h + W_f f); returns a (n)
// probability vector over the flattened grid.
ad::Tensor attention_step(const FeatureMap& f, const DecoderState& state,
                          const DecoderParams& params);

// k = sum_ij alpha_ij f_ij. Errors if alpha is not normalized within 1e-6.
ad::Tensor pool_attention(const FeatureMap& f, const ad::Tensor& alpha);

struct StepResult {
  ad::Tensor alpha;   // (n) attention over cells
  ad::Tensor scores;  // (C+1) class probabilities, background last
  DecoderState state;
};

StepResult decoder_step(const FeatureMap& f, const DecoderState& state,
                        const PrototypeBank& bank, const DecoderParams& params);

struct DecodeTrace {
  std::vector<ad::Tensor> alphas;
  std::vector<ad::Tensor> scores;
};

// Teacher-forced unroll for `steps` = n_q steps.
DecodeTrace decode_train(const FeatureMap& f, const PrototypeBank& bank,
                         const DecoderParams& params, int steps);

struct Prediction {
  int y = 0;
  int x = 0;
  int cls = 0;

  bool operator==(const Prediction&) const = default;
};

// Runs the decoder until it scores the background class highest or t_max
// steps elapse; emits the attention argmax cell (scaled back to image
// pixels) and argmax class per step. No gradients are recorded.
std::vector<Prediction> decode_infer(const FeatureMap& f, const PrototypeBank& bank,
                                     const DecoderParams& params, int t_max);

// Support pooling through the attention module instead of the label
// Gaussians (the "without guide" ablation): the decoder attends for
// n_s steps per support image with the score feedback held at its
// initial value, and the step-t pooled vector counts toward the class of
// the t-th ordered label. Background is pooled uniformly over each image.
PrototypeBank build_prototypes_attention(const std::vector<SupportItem>& support, int ways,
                                         const DecoderParams& params, const EmbedParams& embed);

}  // namespace seqcount
