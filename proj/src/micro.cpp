#include "seqcount/micro.hpp"

namespace seqcount {

ModelDims micro_dims() {
  ModelDims dims;
  dims.backbone_widths = {4, 6, 8, 8};
  dims.attn_dim = 8;
  dims.hidden_dim = 16;
  dims.input_dim = 12;
  dims.embed_dim = 8;
  dims.max_ways = 10;
  return dims;
}

Model micro_model(std::uint64_t seed) {
  return init_model(micro_dims(), /*image_h=*/32, /*image_w=*/32, /*sigma=*/8.0, seed);
}

EpisodeTask micro_task(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  cfg.radius_min = 3;
  cfg.radius_max = 5;
  cfg.max_objects = 2;
  cfg.ways_min = cfg.ways_max = 2;
  cfg.shots_min = cfg.shots_max = 1;
  cfg.count_min = cfg.count_max = 1;
  Rng rng(seed);
  return sample_task(rng, Split::meta_train, cfg);
}

ad::GradCheckReport micro_gradcheck(double step, double tol) {
  const Model model = micro_model();
  const EpisodeTask task = micro_task();
  const LossWeights weights = {/*lambda1=*/10.0, /*lambda2=*/1.0, /*epoch=*/0};
  auto f = [&]() { return episode_forward_loss(model, task, weights); };
  return ad::grad_check(f, model.named_params(), step, tol);
}

}  // namespace seqcount
