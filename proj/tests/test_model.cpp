#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "seqcount/micro.hpp"
#include "seqcount/model.hpp"
#include "seqcount/trainer.hpp"

using namespace seqcount;
using ad::Tensor;

namespace {

FeatureMap constant_feature_map(int grid_h, int grid_w, const std::vector<double>& cell_vec) {
  const int dim = static_cast<int>(cell_vec.size());
  const long n = static_cast<long>(grid_h) * grid_w;
  FeatureMap fm;
  fm.grid_h = grid_h;
  fm.grid_w = grid_w;
  fm.dim = dim;
  fm.cells = Tensor::zeros({dim, static_cast<int>(n)});
  for (int d = 0; d < dim; ++d)
    for (long i = 0; i < n; ++i) fm.cells.data()[d * n + i] = cell_vec[d];
  return fm;
}

Image flat_image(int h, int w, std::uint8_t value) {
  Image img;
  img.h = h;
  img.w = w;
  img.rgb.assign(static_cast<size_t>(h) * w * 3, value);
  return img;
}

}  // namespace

TEST_CASE("feature map shapes and coordinate channels") {
  ModelDims dims;
  Rng rng(1);
  const BackboneParams params = init_backbone(dims, rng);

  SceneConfig cfg;
  const Scene scene = generate_scene(3, {1, 7}, {2, 1}, cfg);
  const FeatureMap fm = extract_features(scene.image, params, dims);
  CHECK(fm.grid_h == 16);
  CHECK(fm.grid_w == 16);
  CHECK(fm.dim == 16 + 32 + 64 + 64 + 16 + 16);  // 208
  CHECK(fm.cells.shape() == ad::Shape{208, 256});

  // Exactly two coordinate ones per cell, at the right rows.
  const long n = 256;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      const long cell = i * 16 + j;
      int ones = 0;
      for (int d = 176; d < 208; ++d)
        if (fm.cells[d * n + cell] == 1.0) ++ones;
      CHECK(ones == 2);
      CHECK(fm.cells[(176 + i) * n + cell] == 1.0);
      CHECK(fm.cells[(176 + 16 + j) * n + cell] == 1.0);
    }

  // Ablation drops exactly grid_h + grid_w channels.
  ModelDims no_coords = dims;
  no_coords.coord_channels = false;
  const FeatureMap bare = extract_features(scene.image, params, no_coords);
  CHECK(bare.dim == fm.dim - 32);

  CHECK_THROWS_AS(extract_features(flat_image(60, 64, 0), params, dims), std::invalid_argument);
}

TEST_CASE("shared_forward applies one parameter set to every image") {
  ModelDims dims;
  Rng rng(2);
  const BackboneParams params = init_backbone(dims, rng);
  SceneConfig cfg;
  const Scene scene = generate_scene(8, {0}, {1}, cfg);

  const auto maps = shared_forward({scene.image, scene.image, scene.image}, params, dims);
  CHECK(maps.size() == 3);
  CHECK(maps[0].cells.values() == maps[1].cells.values());  // bit-identical

  CHECK(shared_forward({}, params, dims).empty());
  CHECK_THROWS_AS(shared_forward({scene.image, flat_image(32, 32, 0)}, params, dims),
                  std::invalid_argument);

  // Weight sharing: a sum over all maps sends gradient to every stage.
  ad::Graph g;
  ad::GraphScope scope(g);
  const auto fms = shared_forward({scene.image, scene.image}, params, dims);
  ad::Tensor loss = ad::add(ad::sum(fms[0].cells), ad::sum(fms[1].cells));
  g.backward(loss);
  for (size_t s = 0; s < params.weights.size(); ++s) {
    double norm = 0.0;
    for (double v : params.weights[s].grad()) norm += std::abs(v);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("translated content shifts the feature grid where the borders stay out of reach") {
  ModelDims dims;
  Rng rng(3);
  const BackboneParams params = init_backbone(dims, rng);

  // 128x128 canvas, constant background, one block pattern; the second
  // image is the first translated 16 pixels in x.
  const int hw = 128, shift = 16;
  Image a = flat_image(hw, hw, 100);
  Image b = flat_image(hw, hw, 100);
  auto paint = [&](Image& img, int y0, int x0) {
    for (int y = y0; y < y0 + 12; ++y)
      for (int x = x0; x < x0 + 12; ++x)
        for (int c = 0; c < 3; ++c)
          img.rgb[(static_cast<size_t>(y) * hw + x) * 3 + c] =
              static_cast<std::uint8_t>(30 + 40 * c + (y - y0) + 2 * (x - x0));
  };
  paint(a, 56, 40);
  paint(b, 56, 40 + shift);

  const FeatureMap fa = extract_features(a, params, dims);
  const FeatureMap fb = extract_features(b, params, dims);
  const long n = static_cast<long>(fa.grid_h) * fa.grid_w;
  const int cell_shift = shift / 4;
  // Stage-4 receptive field stays clear of both borders for these cells.
  for (int i = 10; i <= 20; ++i)
    for (int j = 10; j <= 16; ++j)
      for (int d = 0; d < 176; ++d) {  // non-coordinate channels
        const double va = fa.cells[d * n + i * fa.grid_w + j];
        const double vb = fb.cells[d * n + i * fb.grid_w + j + cell_shift];
        CHECK(va == vb);
      }
}

TEST_CASE("gaussian maps") {
  // Center on a cell, sigma 2: value one cell-diagonal away is analytic.
  const Tensor amp = gaussian_map(8.0, 8.0, 2.0, 16, 16, GaussianMode::amplitude);
  CHECK(amp[8 * 16 + 8] == 1.0);
  CHECK(amp[8 * 16 + 10] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  for (long i = 0; i < amp.numel(); ++i) {
    CHECK(amp[i] > 0.0);
    CHECK(amp[i] <= 1.0);
  }

  const Tensor prob = gaussian_map(3.7, 9.2, 2.0, 16, 16, GaussianMode::probability, 1e-8);
  double total = 0.0;
  for (long i = 0; i < prob.numel(); ++i) total += prob[i];
  CHECK(std::abs(total - 1.0) <= 1e-9);

  CHECK_THROWS_AS(gaussian_map(4, 4, 0.0, 16, 16, GaussianMode::amplitude), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_map(-1, 4, 2.0, 16, 16, GaussianMode::amplitude), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_map(4, 16.0, 2.0, 16, 16, GaussianMode::amplitude), std::invalid_argument);
}

TEST_CASE("background map complements the object kernels and clamps at zero") {
  CHECK(background_map({}, 4, 4).values() == std::vector<double>(16, 1.0));

  const Tensor one = gaussian_map(2.0, 2.0, 2.0, 8, 8, GaussianMode::amplitude);
  const Tensor bg = background_map({one}, 8, 8);
  CHECK(bg[2 * 8 + 2] == 0.0);  // exact complement at the peak cell

  // Two overlapping kernels: where their sum tops 1, the clamp engages.
  const Tensor k1 = gaussian_map(4.0, 3.0, 2.0, 8, 8, GaussianMode::amplitude);
  const Tensor k2 = gaussian_map(4.0, 4.0, 2.0, 8, 8, GaussianMode::amplitude);
  const double overlap = k1[4 * 8 + 3] + k2[4 * 8 + 3];  // 1 + exp(-1/8)
  CHECK(overlap > 1.2);
  const Tensor bg2 = background_map({k1, k2}, 8, 8);
  CHECK(bg2[4 * 8 + 3] == 0.0);
  // Where no clamping occurred, background + sum == 1 exactly.
  for (int i = 0; i < 64; ++i) {
    const double s = k1[i] + k2[i];
    if (s < 1.0) CHECK(bg2[i] == doctest::Approx(1.0 - s).epsilon(1e-12));
  }

  CHECK_THROWS_AS(background_map({gaussian_map(1, 1, 1, 4, 4, GaussianMode::amplitude)}, 8, 8),
                  std::invalid_argument);
}

TEST_CASE("pool_by_map") {
  Rng rng(10);
  FeatureMap fm;
  fm.grid_h = 4;
  fm.grid_w = 4;
  fm.dim = 3;
  fm.cells = Tensor::zeros({3, 16});
  for (long i = 0; i < fm.cells.numel(); ++i) fm.cells.data()[i] = rng.uniform(-1, 1);

  // One-hot map returns that cell's descriptor exactly.
  Tensor onehot = Tensor::zeros({4, 4});
  onehot.data()[5] = 1.0;
  const Tensor picked = pool_by_map(fm, onehot);
  for (int d = 0; d < 3; ++d) CHECK(picked[d] == fm.cells[d * 16 + 5]);

  // Uniform map averages all cells.
  const Tensor uniform = Tensor::full({4, 4}, 0.25);
  const Tensor mean_vec = pool_by_map(fm, uniform);
  for (int d = 0; d < 3; ++d) {
    double m = 0.0;
    for (int i = 0; i < 16; ++i) m += fm.cells[d * 16 + i];
    CHECK(mean_vec[d] == doctest::Approx(m / 16.0).epsilon(1e-12));
  }

  // Scale invariance through normalization.
  Tensor base = Tensor::zeros({4, 4});
  for (long i = 0; i < 16; ++i) base.data()[i] = rng.uniform(0.0, 1.0);
  Tensor scaled = Tensor::zeros({4, 4});
  for (long i = 0; i < 16; ++i) scaled.data()[i] = 3.5 * base[i];
  const Tensor pa = pool_by_map(fm, base), pb = pool_by_map(fm, scaled);
  for (int d = 0; d < 3; ++d) CHECK(pa[d] == doctest::Approx(pb[d]).epsilon(1e-12));

  CHECK_THROWS_AS(pool_by_map(fm, Tensor::zeros({4, 4})), std::invalid_argument);
}

TEST_CASE("build_prototypes") {
  Rng rng(20);
  const EmbedParams embed = init_embed(3, 4, rng);

  SUBCASE("single object: prototype equals its pooled vector") {
    FeatureMap fm = constant_feature_map(8, 8, {0, 0, 0});
    Rng r2(21);
    for (long i = 0; i < fm.cells.numel(); ++i) fm.cells.data()[i] = r2.uniform(-1, 1);
    SupportItem item{fm, {{12, 20, 0}}};
    const PrototypeBank bank = build_prototypes({item}, 8.0, 1, embed);
    CHECK(bank.raw.shape() == ad::Shape{2, 3});
    const Tensor expected =
        pool_by_map(fm, gaussian_map(3.0, 5.0, 2.0, 8, 8, GaussianMode::amplitude));
    for (int d = 0; d < 3; ++d) CHECK(bank.raw[d] == expected[d]);

    // Two identical support images: averaging equal vectors changes nothing.
    const PrototypeBank bank2 = build_prototypes({item, item}, 8.0, 1, embed);
    for (long i = 0; i < bank.raw.numel(); ++i) CHECK(bank2.raw[i] == bank.raw[i]);
  }

  SUBCASE("constant feature image: every foreground prototype equals the shared vector") {
    const std::vector<double> v = {0.3, -1.2, 0.8};
    const FeatureMap fm = constant_feature_map(8, 8, v);
    SupportItem item{fm, {{4, 4, 0}, {12, 20, 1}, {24, 28, 1}}};
    const PrototypeBank bank = build_prototypes({item}, 8.0, 2, embed);
    for (int c = 0; c < 2; ++c)
      for (int d = 0; d < 3; ++d)
        CHECK(bank.raw[c * 3 + d] == doctest::Approx(v[d]).epsilon(1e-12));
  }

  SUBCASE("missing class errors with its index") {
    const FeatureMap fm = constant_feature_map(8, 8, {1, 2, 3});
    SupportItem item{fm, {{4, 4, 0}}};
    CHECK_THROWS_WITH_AS(build_prototypes({item}, 8.0, 2, embed), doctest::Contains("class 1"),
                         std::invalid_argument);
  }

  SUBCASE("permuting local class ids permutes prototype rows identically") {
    FeatureMap fm = constant_feature_map(8, 8, {0, 0, 0});
    Rng r3(22);
    for (long i = 0; i < fm.cells.numel(); ++i) fm.cells.data()[i] = r3.uniform(-1, 1);
    const std::vector<ScenePointLabel> labels = {{4, 4, 0}, {12, 20, 1}, {24, 28, 2}, {28, 8, 1}};
    SupportItem item{fm, labels};
    const PrototypeBank bank = build_prototypes({item}, 8.0, 3, embed);

    const int perm[3] = {2, 0, 1};
    std::vector<ScenePointLabel> relabeled = labels;
    for (auto& l : relabeled) l.cls = perm[l.cls];
    SupportItem item2{fm, relabeled};
    const PrototypeBank bank2 = build_prototypes({item2}, 8.0, 3, embed);
    for (int c = 0; c < 3; ++c)
      for (int d = 0; d < 3; ++d) CHECK(bank2.raw[perm[c] * 3 + d] == bank.raw[c * 3 + d]);
    // Background row unaffected.
    for (int d = 0; d < 3; ++d) CHECK(bank2.raw[3 * 3 + d] == bank.raw[3 * 3 + d]);
  }

  SUBCASE("one shared embedding transforms prototypes and receives gradient") {
    FeatureMap fm = constant_feature_map(8, 8, {1.0, 2.0, 3.0});
    fm.cells.set_requires_grad(false);
    SupportItem item{fm, {{4, 4, 0}}};
    ad::Graph g;
    ad::GraphScope scope(g);
    EmbedParams e2 = embed;
    e2.weight.zero_grad();
    e2.bias.zero_grad();
    const PrototypeBank bank = build_prototypes({item}, 8.0, 1, e2);
    g.backward(ad::sum(bank.embedded));
    double wn = 0.0, bn = 0.0;
    for (double x : e2.weight.grad()) wn += std::abs(x);
    for (double x : e2.bias.grad()) bn += std::abs(x);
    CHECK(wn > 0.0);
    CHECK(bn > 0.0);
  }
}

TEST_CASE("attention and decoding") {
  Rng rng(30);
  ModelDims dims = micro_dims();
  const int dim = 5;
  DecoderParams params = init_decoder(dims, dim, rng);
  FeatureMap fm;
  fm.grid_h = 4;
  fm.grid_w = 4;
  fm.dim = dim;
  fm.cells = Tensor::zeros({dim, 16});
  for (long i = 0; i < fm.cells.numel(); ++i) fm.cells.data()[i] = rng.uniform(-1, 1);

  SUBCASE("v = 0 gives uniform attention; alpha always sums to 1") {
    DecoderParams p0 = params;
    p0.v = Tensor::zeros({dims.attn_dim}, true);
    const Tensor alpha = attention_step(fm, initial_state(p0, 2), p0);
    for (long i = 0; i < 16; ++i) CHECK(alpha[i] == doctest::Approx(1.0 / 16).epsilon(1e-12));

    const Tensor a2 = attention_step(fm, initial_state(params, 2), params);
    double total = 0.0;
    for (long i = 0; i < 16; ++i) total += a2[i];
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }

  SUBCASE("identical feature columns get identical attention at h = 0") {
    FeatureMap twin = fm;
    twin.cells = Tensor::from_values({dim, 16}, fm.cells.values());
    for (int d = 0; d < dim; ++d)
      twin.cells.data()[d * 16 + 9] = twin.cells.data()[d * 16 + 2];
    const Tensor alpha = attention_step(twin, initial_state(params, 2), params);
    CHECK(alpha[9] == alpha[2]);
  }

  SUBCASE("pool_attention is the convex combination of cells") {
    Tensor alpha = Tensor::zeros({16});
    alpha.data()[3] = 0.25;
    alpha.data()[11] = 0.75;
    const Tensor k = pool_attention(fm, alpha);
    for (int d = 0; d < dim; ++d)
      CHECK(k[d] ==
            doctest::Approx(0.25 * fm.cells[d * 16 + 3] + 0.75 * fm.cells[d * 16 + 11])
                .epsilon(1e-12));

    Tensor onehot = Tensor::zeros({16});
    onehot.data()[7] = 1.0;
    const Tensor k1 = pool_attention(fm, onehot);
    for (int d = 0; d < dim; ++d) CHECK(k1[d] == fm.cells[d * 16 + 7]);

    CHECK_THROWS_AS(pool_attention(fm, Tensor::full({16}, 0.5)), std::invalid_argument);
  }

  SUBCASE("scores form a probability vector over C+1 classes") {
    PrototypeBank bank;
    bank.ways = 3;
    bank.raw = Tensor::zeros({4, dim});
    bank.embedded = Tensor::zeros({4, dims.embed_dim});
    Rng r(31);
    for (long i = 0; i < bank.embedded.numel(); ++i) bank.embedded.data()[i] = r.uniform(-1, 1);
    const StepResult step = decoder_step(fm, initial_state(params, 3), bank, params);
    CHECK(step.scores.shape() == ad::Shape{4});
    double total = 0.0;
    for (long i = 0; i < 4; ++i) total += step.scores[i];
    CHECK(std::abs(total - 1.0) <= 1e-12);

    // Determinism: identical inputs give identical outputs.
    const StepResult again = decoder_step(fm, initial_state(params, 3), bank, params);
    CHECK(again.scores.values() == step.scores.values());
    CHECK(again.alpha.values() == step.alpha.values());
  }

  SUBCASE("orthonormal prototypes: a query equal to prototype j wins class j") {
    PrototypeBank bank;
    bank.ways = 3;
    bank.raw = Tensor::zeros({4, dim});
    bank.embedded = Tensor::zeros({4, dims.embed_dim});
    for (int c = 0; c < 4; ++c) bank.embedded.data()[c * dims.embed_dim + c] = 1.0;

    for (int j = 0; j < 4; ++j) {
      DecoderParams forced = params;
      forced.w_q = Tensor::zeros({dims.embed_dim, dims.hidden_dim}, true);
      forced.b_q = Tensor::zeros({dims.embed_dim}, true);
      forced.b_q.data()[j] = 1.0;  // u equals embedded prototype j
      const StepResult step = decoder_step(fm, initial_state(forced, 3), bank, forced);
      int best = 0;
      for (int c = 1; c < 4; ++c)
        if (step.scores[c] > step.scores[best]) best = c;
      CHECK(best == j);
    }
  }

  SUBCASE("decode_train threads state exactly like manual stepping") {
    PrototypeBank bank;
    bank.ways = 2;
    bank.raw = Tensor::zeros({3, dim});
    bank.embedded = Tensor::zeros({3, dims.embed_dim});
    Rng r(32);
    for (long i = 0; i < bank.embedded.numel(); ++i) bank.embedded.data()[i] = r.uniform(-1, 1);

    const DecodeTrace trace = decode_train(fm, bank, params, 2);
    CHECK(trace.alphas.size() == 2);
    CHECK(trace.scores.size() == 2);

    const StepResult s1 = decoder_step(fm, initial_state(params, 2), bank, params);
    const StepResult s2 = decoder_step(fm, s1.state, bank, params);
    CHECK(trace.alphas[1].values() == s2.alpha.values());
    CHECK(trace.scores[1].values() == s2.scores.values());

    CHECK_THROWS_AS(decode_train(fm, bank, params, 0), std::invalid_argument);
  }

  SUBCASE("decode_infer stops on background and caps at t_max") {
    PrototypeBank bank;
    bank.ways = 2;
    bank.raw = Tensor::zeros({3, dim});
    bank.embedded = Tensor::zeros({3, dims.embed_dim});
    for (int c = 0; c < 3; ++c) bank.embedded.data()[c * dims.embed_dim + c] = 1.0;

    DecoderParams forced = params;
    forced.w_q = Tensor::zeros({dims.embed_dim, dims.hidden_dim}, true);
    forced.b_q = Tensor::zeros({dims.embed_dim}, true);
    forced.b_q.data()[2] = 1.0;  // background always wins
    CHECK(decode_infer(fm, bank, forced, 5).empty());

    forced.b_q.data()[2] = 0.0;
    forced.b_q.data()[0] = 1.0;  // class 0 always wins
    const auto preds = decode_infer(fm, bank, forced, 3);
    CHECK(preds.size() == 3);
    for (const auto& p : preds) {
      CHECK(p.cls == 0);
      CHECK(p.y % 4 == 0);
      CHECK(p.x % 4 == 0);
    }
  }
}

TEST_CASE("gradients reach every parameter group on a micro episode") {
  const Model model = micro_model(101);
  const EpisodeTask task = micro_task(102);
  model.zero_grads();
  ad::Graph g;
  ad::GraphScope scope(g);
  const LossWeights weights{10.0, 1.0, 0};
  ad::Tensor loss = episode_forward_loss(model, task, weights);
  g.backward(loss);
  for (const auto& [name, p] : model.named_params()) {
    INFO(name);
    REQUIRE(p.has_grad());
    double norm = 0.0;
    for (double v : p.grad()) norm += std::abs(v);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("full-pipeline finite-difference sweep on the micro episode") {
  const auto report = micro_gradcheck(1e-5, 1e-3);
  INFO(report.summary());
  CHECK(report.pass);
}
