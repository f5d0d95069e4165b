#include "seqcount/backbone.hpp"

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

}  // namespace

BackboneParams init_backbone(const ModelDims& dims, Rng& rng) {
  BackboneParams p;
  int cin = 3;
  for (int width : dims.backbone_widths) {
    p.weights.push_back(xavier({width, cin, 3, 3}, cin * 9L, width * 9L, rng));
    p.biases.push_back(ad::Tensor::zeros({width}, /*requires_grad=*/true));
    cin = width;
  }
  return p;
}

int feature_dim(const ModelDims& dims, int grid_h, int grid_w) {
  int d = 0;
  for (int w : dims.backbone_widths) d += w;
  if (dims.coord_channels) d += grid_h + grid_w;
  return d;
}

ad::Tensor coord_channels(int grid_h, int grid_w) {
  const long n = static_cast<long>(grid_h) * grid_w;
  ad::Tensor t = ad::Tensor::zeros({grid_h + grid_w, static_cast<int>(n)});
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) {
      const long cell = static_cast<long>(i) * grid_w + j;
      t.data()[i * n + cell] = 1.0;
      t.data()[(static_cast<long>(grid_h) + j) * n + cell] = 1.0;
    }
  return t;
}

ad::Tensor image_to_tensor(const Image& img) {
  ad::Tensor t = ad::Tensor::zeros({3, img.h, img.w});
  const long plane = static_cast<long>(img.h) * img.w;
  for (long i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      t.data()[c * plane + i] = img.rgb[i * 3 + c] / 255.0;
  return t;
}

FeatureMap extract_features(const ad::Tensor& image, const BackboneParams& params,
                            const ModelDims& dims) {
  if (image.shape().size() != 3 || image.shape()[0] != 3)
    throw std::invalid_argument("extract_features: expected (3,h,w) image, got " +
                                ad::shape_str(image.shape()));
  const int h = image.shape()[1], w = image.shape()[2];
  if (h % 16 != 0 || w % 16 != 0)
    throw std::invalid_argument("extract_features: image size " + std::to_string(h) + "x" +
                                std::to_string(w) + " must be divisible by 16");
  const int gh = h / 4, gw = w / 4;
  const long n = static_cast<long>(gh) * gw;

  std::vector<ad::Tensor> blocks;
  ad::Tensor x = image;
  for (size_t s = 0; s < params.weights.size(); ++s) {
    x = ad::tanh(ad::conv2d(x, params.weights[s], params.biases[s], /*stride=*/2, /*pad=*/1));
    ad::Tensor resized = ad::upsample_nearest(x, gh, gw);
    blocks.push_back(ad::reshape(resized, {resized.shape()[0], static_cast<int>(n)}));
  }
  if (dims.coord_channels) blocks.push_back(coord_channels(gh, gw));

  FeatureMap fm;
  fm.cells = ad::concat(blocks, /*axis=*/0);
  fm.grid_h = gh;
  fm.grid_w = gw;
  fm.dim = fm.cells.shape()[0];
  return fm;
}

FeatureMap extract_features(const Image& img, const BackboneParams& params,
                            const ModelDims& dims) {
  return extract_features(image_to_tensor(img), params, dims);
}

std::vector<FeatureMap> shared_forward(const std::vector<Image>& images,
                                       const BackboneParams& params, const ModelDims& dims) {
  for (size_t i = 1; i < images.size(); ++i)
    if (images[i].h != images[0].h || images[i].w != images[0].w)
      throw std::invalid_argument("shared_forward: mixed image sizes " +
                                  std::to_string(images[0].h) + "x" + std::to_string(images[0].w) +
                                  " vs " + std::to_string(images[i].h) + "x" +
                                  std::to_string(images[i].w));
  std::vector<FeatureMap> maps;
  maps.reserve(images.size());
  for (const Image& img : images) maps.push_back(extract_features(img, params, dims));
  return maps;
}

}  // namespace seqcount
