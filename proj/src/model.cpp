#include "seqcount/model.hpp"

#include <stdexcept>

namespace seqcount {

Model init_model(const ModelDims& dims, int image_h, int image_w, double sigma,
                 std::uint64_t seed) {
  if (image_h % 16 != 0 || image_w % 16 != 0)
    throw std::invalid_argument("init_model: image size must be divisible by 16");
  Model m;
  m.dims = dims;
  m.image_h = image_h;
  m.image_w = image_w;
  m.sigma = sigma;
  Rng rng(Rng::derive(seed, 0x6d6f64656cULL));
  m.backbone = init_backbone(dims, rng);
  m.decoder = init_decoder(dims, feature_dim(dims, image_h / 4, image_w / 4), rng);
  m.embed = init_embed(feature_dim(dims, image_h / 4, image_w / 4), dims.embed_dim, rng);
  return m;
}

std::vector<std::pair<std::string, ad::Tensor>> Model::named_params() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  for (size_t s = 0; s < backbone.weights.size(); ++s) {
    out.emplace_back("backbone.w" + std::to_string(s), backbone.weights[s]);
    out.emplace_back("backbone.b" + std::to_string(s), backbone.biases[s]);
  }
  out.emplace_back("dec.w_h", decoder.w_h);
  out.emplace_back("dec.w_f", decoder.w_f);
  out.emplace_back("dec.v", decoder.v);
  out.emplace_back("dec.w_k", decoder.w_k);
  out.emplace_back("dec.w_c", decoder.w_c);
  out.emplace_back("dec.lstm.w_xi", decoder.w_xi);
  out.emplace_back("dec.lstm.w_hi", decoder.w_hi);
  out.emplace_back("dec.lstm.b_i", decoder.b_i);
  out.emplace_back("dec.lstm.w_xf", decoder.w_xf);
  out.emplace_back("dec.lstm.w_hf", decoder.w_hf);
  out.emplace_back("dec.lstm.b_f", decoder.b_f);
  out.emplace_back("dec.lstm.w_xg", decoder.w_xg);
  out.emplace_back("dec.lstm.w_hg", decoder.w_hg);
  out.emplace_back("dec.lstm.b_g", decoder.b_g);
  out.emplace_back("dec.lstm.w_xo", decoder.w_xo);
  out.emplace_back("dec.lstm.w_ho", decoder.w_ho);
  out.emplace_back("dec.lstm.b_o", decoder.b_o);
  out.emplace_back("dec.w_q", decoder.w_q);
  out.emplace_back("dec.b_q", decoder.b_q);
  out.emplace_back("embed.w", embed.weight);
  out.emplace_back("embed.b", embed.bias);
  return out;
}

void Model::zero_grads() const {
  for (auto& [name, p] : named_params()) const_cast<ad::Tensor&>(p).zero_grad();
}

PrototypeBank Model::prototypes_for(const std::vector<SupportItem>& support, int ways) const {
  if (dims.guide) return build_prototypes(support, sigma, ways, embed);
  return build_prototypes_attention(support, ways, decoder, embed);
}

}  // namespace seqcount
