#pragma once

#include <string>
#include <utility>
#include <vector>

#include "seqcount/backbone.hpp"
#include "seqcount/decoder.hpp"
#include "seqcount/prototypes.hpp"

namespace seqcount {

// Full parameter set: shared feature extractor, sequential decoder, and
// the prototype-side embedding. `sigma` (image pixels) travels with the
// model because support pooling needs it at evaluation time too.
struct Model {
  ModelDims dims;
  int image_h = 64;
  int image_w = 64;
  double sigma = 8.0;
  BackboneParams backbone;
  DecoderParams decoder;
  EmbedParams embed;

  std::vector<std::pair<std::string, ad::Tensor>> named_params() const;
  void zero_grads() const;

  int grid_h() const { return image_h / 4; }
  int grid_w() const { return image_w / 4; }

  // Gaussian-guided or attention-pooled prototypes, per dims.guide.
  PrototypeBank prototypes_for(const std::vector<SupportItem>& support, int ways) const;
};

Model init_model(const ModelDims& dims, int image_h, int image_w, double sigma,
                 std::uint64_t seed);

}  // namespace seqcount
