#pragma once

#include <vector>

#include "seqcount/backbone.hpp"
#include "seqcount/episode.hpp"
#include "seqcount/ops.hpp"

namespace seqcount {

enum class GaussianMode {
  amplitude,    // peak value 1 at the cell nearest the center
  probability,  // values sum to 1 (optionally after additive smoothing)
};

// Isotropic Gaussian rasterized on the feature grid as a (grid_h, grid_w)
// constant tensor. `cy`, `cx` and `sigma` are in feature-grid units. In
// probability mode `eps` is added to every cell before the final
// normalization (smoothing for divergence targets).
ad::Tensor gaussian_map(double cy, double cx, double sigma, int grid_h, int grid_w,
                        GaussianMode mode, double eps = 0.0);

// 1 - sum of the object maps, clamped at 0 (overlapping kernels can push
// the sum past 1). Inputs must be amplitude-mode maps of shape
// (grid_h, grid_w); an empty list gives the all-ones grid.
ad::Tensor background_map(const std::vector<ad::Tensor>& object_maps, int grid_h, int grid_w);

// Weighted spatial pooling: weights are normalized to sum 1, then
// k = sum_ij w_ij * f_ij. Errors on an all-zero map.
ad::Tensor pool_by_map(const FeatureMap& features, const ad::Tensor& map);

// Shared linear embedding applied to every pooled descriptor (prototypes
// and any raw-feature path).
struct EmbedParams {
  ad::Tensor weight;  // (dim, embed_dim)
  ad::Tensor bias;    // (embed_dim)
};

EmbedParams init_embed(int dim, int embed_dim, Rng& rng);

// Rows 0..C-1 are the task classes in local order, row C the background.
struct PrototypeBank {
  ad::Tensor raw;       // (C+1, dim)
  ad::Tensor embedded;  // (C+1, embed_dim)
  int ways = 0;
};

struct SupportItem {
  FeatureMap features;
  std::vector<ScenePointLabel> labels;  // local class indices, sorted
};

// Gaussian-guided prototypes: each labeled instance pooled under its
// amplitude kernel, averaged per class over all support images;
// background pooled under each image's complement map and averaged.
// `sigma` is in image pixels and is scaled to the /4 grid internally.
PrototypeBank build_prototypes(const std::vector<SupportItem>& support, double sigma,
                               int ways, const EmbedParams& embed);

// Embeds a (rows, dim) matrix through the shared linear layer.
ad::Tensor embed_rows(const ad::Tensor& rows, const EmbedParams& embed);

}  // namespace seqcount
