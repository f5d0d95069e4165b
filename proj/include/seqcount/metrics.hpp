#pragma once

#include <string>
#include <utility>
#include <vector>

#include "seqcount/episode.hpp"
#include "seqcount/model.hpp"

namespace seqcount {

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (pred index, gt index)
  int unmatched_pred = 0;
  int unmatched_gt = 0;
  double radius = 0.0;

  int matched() const { return static_cast<int>(pairs.size()); }
};

// Greedy one-to-one matching per class: repeatedly pairs the globally
// closest unmatched same-class (pred, gt) with distance <= radius.
MatchResult match_points(const std::vector<Prediction>& pred,
                         const std::vector<ScenePointLabel>& gt, double radius);

struct CountStats {
  double mae = 0.0;
  double rmse = 0.0;
};

// Per-(episode, class) count errors over foreground classes.
CountStats counting_errors(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& episodes);

// (recall, precision) pooled over all match results; 0 when a denominator
// is 0.
std::pair<double, double> detection_scores(const std::vector<MatchResult>& results);

struct EvalBucket {
  int ways = 0;
  int shots = 0;
  int episodes = 0;
  double mae = 0.0, rmse = 0.0, recall = 0.0, precision = 0.0;
};

struct EvalReport {
  int episodes = 0;
  double radius = 0.0;
  int t_max = 0;
  double mae = 0.0, rmse = 0.0, recall = 0.0, precision = 0.0;
  std::vector<EvalBucket> buckets;  // one per (ways, shots) present

  std::string to_text() const;
  std::string buckets_csv() const;  // plot-ready metric vs ways/shots table
};

// Per-episode inference over a pool, aggregated overall and per
// (ways, shots) bucket. Episodes may be evaluated by parallel workers;
// aggregation folds in episode-index order either way.
EvalReport evaluate(const Model& model, const std::vector<EpisodeTask>& pool, double radius,
                    int t_max, int workers = 1);

// Inference for one task: predictions plus per-class counts.
std::vector<Prediction> infer_task(const Model& model, const EpisodeTask& task, int t_max);

}  // namespace seqcount
