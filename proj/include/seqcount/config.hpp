#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seqcount {

// Synthetic glyph-scene generation and task sampling parameters.
struct SceneConfig {
  int height = 64;
  int width = 64;
  int radius_min = 4;
  int radius_max = 7;   // min center separation is 2 * radius_max
  int max_objects = 8;
  int ways_min = 2;
  int ways_max = 5;
  int shots_min = 3;
  int shots_max = 5;
  int count_min = 1;    // instances per class per image
  int count_max = 4;
};

// Architecture sizes. `guide` selects label-Gaussian support pooling; the
// ablation replaces it with the attention module.
struct ModelDims {
  std::vector<int> backbone_widths = {16, 32, 64, 64};
  int attn_dim = 64;
  int hidden_dim = 128;
  int input_dim = 96;
  int embed_dim = 64;
  int max_ways = 10;
  bool coord_channels = true;
  bool guide = true;
};

struct TrainConfig {
  double lr0 = 4e-5;
  int plateau_window = 40;
  double lr_factor = 0.5;
  int episodes_per_epoch = 100;
  int epochs = 100;
  double lambda1_0 = 10.0;
  double gamma = 0.98;
  double lambda_floor = 0.1;
  double lambda2 = 1.0;
  double sigma = 8.0;  // Gaussian std in image pixels
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
};

// Flat key=value run configuration covering training, model and scene
// settings. Unknown keys are rejected. SEQCOUNT_SEED in the environment
// overrides `seed`.
struct RunConfig {
  TrainConfig train;
  ModelDims model;
  SceneConfig scene;

  static RunConfig load(const std::string& path);
  static RunConfig parse(const std::string& text);
  void set(const std::string& key, const std::string& value);
  void apply_env();
  // Every key with its effective value, suitable for echoing into a run
  // directory and for reparsing.
  std::string to_text() const;
};

}  // namespace seqcount
