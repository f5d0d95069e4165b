#include "seqcount/prototypes.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace seqcount {

ad::Tensor gaussian_map(double cy, double cx, double sigma, int grid_h, int grid_w,
                        GaussianMode mode, double eps) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("gaussian_map: sigma must be positive, got " + std::to_string(sigma));
  if (cy < 0.0 || cy >= grid_h || cx < 0.0 || cx >= grid_w)
    throw std::invalid_argument("gaussian_map: center (" + std::to_string(cy) + "," +
                                std::to_string(cx) + ") outside grid " + std::to_string(grid_h) +
                                "x" + std::to_string(grid_w));
  ad::Tensor t = ad::Tensor::zeros({grid_h, grid_w});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double mx = 0.0, total = 0.0;
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) {
      const double dy = i - cy, dx = j - cx;
      const double v = std::exp(-(dy * dy + dx * dx) * inv);
      t.data()[static_cast<long>(i) * grid_w + j] = v;
      mx = std::max(mx, v);
      total += v;
    }
  if (mode == GaussianMode::amplitude) {
    for (long i = 0; i < t.numel(); ++i) t.data()[i] /= mx;
  } else {
    total += eps * static_cast<double>(t.numel());
    for (long i = 0; i < t.numel(); ++i) t.data()[i] = (t.data()[i] + eps) / total;
  }
  return t;
}

ad::Tensor background_map(const std::vector<ad::Tensor>& object_maps, int grid_h, int grid_w) {
  const ad::Shape shape = {grid_h, grid_w};
  for (const auto& m : object_maps)
    if (m.shape() != shape)
      throw std::invalid_argument("background_map: mixed shapes " + ad::shape_str(shape) +
                                  " vs " + ad::shape_str(m.shape()));
  ad::Tensor out = ad::Tensor::full(shape, 1.0);
  for (const auto& m : object_maps)
    for (long i = 0; i < out.numel(); ++i) out.data()[i] -= m[i];
  for (long i = 0; i < out.numel(); ++i) out.data()[i] = std::max(out.data()[i], 0.0);
  return out;
}

ad::Tensor pool_by_map(const FeatureMap& features, const ad::Tensor& map) {
  const long n = static_cast<long>(features.grid_h) * features.grid_w;
  if (map.numel() != n)
    throw std::invalid_argument("pool_by_map: map " + ad::shape_str(map.shape()) +
                                " does not cover grid " + std::to_string(features.grid_h) + "x" +
                                std::to_string(features.grid_w));
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    if (map[i] < 0.0) throw std::invalid_argument("pool_by_map: negative weight");
    total += map[i];
  }
  if (total <= 0.0) throw std::invalid_argument("pool_by_map: all-zero weight map");
  ad::Tensor w = ad::Tensor::zeros({static_cast<int>(n), 1});
  for (long i = 0; i < n; ++i) w.data()[i] = map[i] / total;
  return ad::reshape(ad::matmul(features.cells, w), {features.dim});
}

EmbedParams init_embed(int dim, int embed_dim, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(dim + embed_dim));
  EmbedParams p;
  p.weight = ad::Tensor::zeros({dim, embed_dim}, /*requires_grad=*/true);
  for (long i = 0; i < p.weight.numel(); ++i) p.weight.data()[i] = rng.uniform(-s, s);
  p.bias = ad::Tensor::zeros({embed_dim}, /*requires_grad=*/true);
  return p;
}

ad::Tensor embed_rows(const ad::Tensor& rows, const EmbedParams& embed) {
  ad::Tensor out = ad::matmul(rows, embed.weight);
  // Broadcast the bias over rows via a constant ones column.
  ad::Tensor ones = ad::Tensor::full({rows.shape()[0], 1}, 1.0);
  ad::Tensor bias_rows = ad::matmul(ones, ad::reshape(embed.bias, {1, embed.bias.shape()[0]}));
  return ad::add(out, bias_rows);
}

PrototypeBank build_prototypes(const std::vector<SupportItem>& support, double sigma,
                               int ways, const EmbedParams& embed) {
  if (support.empty()) throw std::invalid_argument("build_prototypes: no support images");
  const int gh = support[0].features.grid_h, gw = support[0].features.grid_w;
  const double grid_sigma = sigma / 4.0;  // image pixels -> /4 feature grid

  // Amplitude kernels for every labeled instance, grouped per image.
  std::vector<std::vector<ad::Tensor>> maps(support.size());
  for (size_t s = 0; s < support.size(); ++s)
    for (const auto& label : support[s].labels)
      maps[s].push_back(gaussian_map(label.y / 4.0, label.x / 4.0, grid_sigma, gh, gw,
                                     GaussianMode::amplitude));

  std::vector<ad::Tensor> rows;
  for (int c = 0; c < ways; ++c) {
    std::vector<ad::Tensor> pooled;
    for (size_t s = 0; s < support.size(); ++s)
      for (size_t i = 0; i < support[s].labels.size(); ++i)
        if (support[s].labels[i].cls == c)
          pooled.push_back(pool_by_map(support[s].features, maps[s][i]));
    if (pooled.empty())
      throw std::invalid_argument("build_prototypes: class " + std::to_string(c) +
                                  " has no support instances");
    ad::Tensor acc = pooled[0];
    for (size_t i = 1; i < pooled.size(); ++i) acc = ad::add(acc, pooled[i]);
    rows.push_back(ad::reshape(ad::scale(acc, 1.0 / static_cast<double>(pooled.size())),
                               {1, support[0].features.dim}));
  }

  // Background: complement map per support image, averaged across images.
  ad::Tensor bg_acc;
  for (size_t s = 0; s < support.size(); ++s) {
    ad::Tensor pooled = pool_by_map(support[s].features, background_map(maps[s], gh, gw));
    bg_acc = bg_acc.defined() ? ad::add(bg_acc, pooled) : pooled;
  }
  rows.push_back(ad::reshape(ad::scale(bg_acc, 1.0 / static_cast<double>(support.size())),
                             {1, support[0].features.dim}));

  PrototypeBank bank;
  bank.ways = ways;
  bank.raw = ad::concat(rows, /*axis=*/0);
  bank.embedded = embed_rows(bank.raw, embed);
  return bank;
}

}  // namespace seqcount
