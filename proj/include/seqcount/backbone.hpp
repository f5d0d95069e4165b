#pragma once

#include <vector>

#include "seqcount/config.hpp"
#include "seqcount/episode.hpp"
#include "seqcount/ops.hpp"
#include "seqcount/rng.hpp"

namespace seqcount {

// Four conv stages (3x3, stride 2, zero pad 1, tanh), each halving the
// spatial resolution.
struct BackboneParams {
  std::vector<ad::Tensor> weights;  // (c_out, c_in, 3, 3)
  std::vector<ad::Tensor> biases;   // (c_out)
};

BackboneParams init_backbone(const ModelDims& dims, Rng& rng);

// Per-cell descriptors for a (grid_h x grid_w) = (H/4 x W/4) grid, stored
// channel-major: cells has shape (dim, grid_h*grid_w) and column
// i*grid_w + j is the descriptor of cell (i, j).
struct FeatureMap {
  ad::Tensor cells;
  int grid_h = 0;
  int grid_w = 0;
  int dim = 0;
};

// Channel count of the concatenated multi-scale descriptor (stage widths
// plus the two coordinate one-hot blocks when enabled).
int feature_dim(const ModelDims& dims, int grid_h, int grid_w);

// Constant (grid_h+grid_w, grid_h*grid_w) block: cell (i,j) carries a 1
// in row i of the y block and row grid_h+j of the x block.
ad::Tensor coord_channels(int grid_h, int grid_w);

ad::Tensor image_to_tensor(const Image& img);  // (3,h,w), values in [0,1]

// Multi-scale feature extraction: all four stage outputs resized
// (nearest) to the /4 grid, channel-concatenated, coordinate one-hot
// appended. Differentiable w.r.t. params and the image tensor. H and W
// must be divisible by 16.
FeatureMap extract_features(const ad::Tensor& image, const BackboneParams& params,
                            const ModelDims& dims);
FeatureMap extract_features(const Image& img, const BackboneParams& params,
                            const ModelDims& dims);

// Applies the same parameters to every image; all images must share one
// size.
std::vector<FeatureMap> shared_forward(const std::vector<Image>& images,
                                       const BackboneParams& params, const ModelDims& dims);

}  // namespace seqcount
