#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "seqcount/config.hpp"
#include "seqcount/episode.hpp"
#include "seqcount/model.hpp"

namespace seqcount {

// Time-varying loss mix: the class-agnostic weight decays exponentially
// to a floor, the classification weight stays constant.
struct LossWeights {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  int epoch = 0;
};

LossWeights lambda_schedule(int epoch, const TrainConfig& cfg);

// lambda1 * sum_t KL(alpha_t || G_t) + lambda2 * sum_t CE(y_t || c_t).
// G targets must be probability maps (smoothed, strictly positive);
// target_classes[t] indexes into the (C+1) score vector.
ad::Tensor episode_loss(const std::vector<ad::Tensor>& alphas,
                        const std::vector<ad::Tensor>& gauss_targets,
                        const std::vector<ad::Tensor>& scores,
                        const std::vector<int>& target_classes, const LossWeights& weights);

// Smoothing added inside the Gaussian targets before renormalization.
inline constexpr double kTargetEps = 1e-8;

// Probability-mode targets for the lexicographically ordered query
// labels, one per teacher-forced step.
std::vector<ad::Tensor> gaussian_targets(const std::vector<ScenePointLabel>& labels,
                                         double sigma, int grid_h, int grid_w);

// Full differentiable pipeline for one episode: shared backbone forward,
// prototype bank, teacher-forced decode of n_q steps, loss.
ad::Tensor episode_forward_loss(const Model& model, const EpisodeTask& task,
                                const LossWeights& weights);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

// One bias-corrected Adam update over all listed parameters (skips
// parameters with no accumulated gradient). Sizes the moment buffers on
// first use.
void adam_step(const std::vector<std::pair<std::string, ad::Tensor>>& params, AdamState& state,
               double lr, const TrainConfig& cfg);

// Halves the learning rate whenever `window` consecutive observations
// pass without a new best; the counter resets on improvement and on each
// halving.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, int window, double factor)
      : lr_(lr0), window_(window), factor_(factor) {}

  double observe(double val_error) {
    if (val_error < best_) {
      best_ = val_error;
      since_best_ = 0;
    } else if (++since_best_ >= window_) {
      lr_ *= factor_;
      since_best_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }
  int since_best() const { return since_best_; }
  void restore(double lr, double best, int since_best) {
    lr_ = lr;
    best_ = best;
    since_best_ = since_best;
  }

 private:
  double lr_;
  int window_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
};

// One optimization step on one episode; returns the loss value.
double train_episode(const Model& model, const EpisodeTask& task, const LossWeights& weights,
                     AdamState& adam, double lr, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
  double lambda1 = 0.0;
};

struct TrainOptions {
  std::string out_dir;      // empty: no checkpoints or metrics log
  std::string resume_from;  // checkpoint path; continues after its epoch
  std::function<void(const EpochStats&)> on_epoch;
  int val_t_max = 32;
};

// Episodic training: cfg.episodes_per_epoch episodes per epoch drawn
// deterministically from the train pool, validation MAE on the held-out
// pool each epoch, plateau schedule, checkpoint per epoch. Aborts with
// the episode index on a non-finite loss. Resuming from a checkpoint
// written at an epoch boundary continues bit-exactly.
std::vector<EpochStats> train(Model& model, const std::vector<EpisodeTask>& train_pool,
                              const std::vector<EpisodeTask>& val_pool, const TrainConfig& cfg,
                              const TrainOptions& options);

// Checkpoint file ("SQCK"): named little-endian f64 tensors; Adam moments
// under adam.m.<name> / adam.v.<name>, optimizer and schedule scalars,
// and cfg.* entries describing the architecture. Round trips bit-exactly.
void save_checkpoint(const std::string& path, const Model& model, const AdamState& adam,
                     const PlateauScheduler& sched, int epoch);

struct LoadedCheckpoint {
  Model model;
  AdamState adam;
  double lr = 0.0;
  double sched_best = std::numeric_limits<double>::infinity();
  int sched_since_best = 0;
  int epoch = 0;
};

// Rebuilds the model architecture from the cfg.* entries.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Loads into an existing model, erroring (with the tensor name) on any
// shape mismatch.
void load_checkpoint_into(const std::string& path, Model& model, AdamState* adam,
                          PlateauScheduler* sched, int* epoch);

}  // namespace seqcount
