#include "seqcount/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace seqcount {

MatchResult match_points(const std::vector<Prediction>& pred,
                         const std::vector<ScenePointLabel>& gt, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("match_points: radius must be positive");
  struct Candidate {
    double dist;
    int pi, gi;
  };
  std::vector<Candidate> candidates;
  for (int pi = 0; pi < static_cast<int>(pred.size()); ++pi)
    for (int gi = 0; gi < static_cast<int>(gt.size()); ++gi) {
      if (pred[pi].cls != gt[gi].cls) continue;
      const double dy = pred[pi].y - gt[gi].y, dx = pred[pi].x - gt[gi].x;
      const double d = std::sqrt(dy * dy + dx * dx);
      if (d <= radius) candidates.push_back({d, pi, gi});
    }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.pi != b.pi) return a.pi < b.pi;
    return a.gi < b.gi;
  });

  MatchResult r;
  r.radius = radius;
  std::vector<char> pred_used(pred.size(), 0), gt_used(gt.size(), 0);
  for (const Candidate& c : candidates) {
    if (pred_used[c.pi] || gt_used[c.gi]) continue;
    pred_used[c.pi] = gt_used[c.gi] = 1;
    r.pairs.emplace_back(c.pi, c.gi);
  }
  r.unmatched_pred = static_cast<int>(pred.size()) - r.matched();
  r.unmatched_gt = static_cast<int>(gt.size()) - r.matched();
  return r;
}

CountStats counting_errors(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& episodes) {
  double abs_sum = 0.0, sq_sum = 0.0;
  long terms = 0;
  for (const auto& [pred, gt] : episodes) {
    if (pred.size() != gt.size())
      throw std::invalid_argument("counting_errors: class count vectors differ in length");
    for (size_t c = 0; c < pred.size(); ++c) {
      const double e = pred[c] - gt[c];
      abs_sum += std::abs(e);
      sq_sum += e * e;
      ++terms;
    }
  }
  CountStats s;
  if (terms) {
    s.mae = abs_sum / static_cast<double>(terms);
    s.rmse = std::sqrt(sq_sum / static_cast<double>(terms));
  }
  return s;
}

std::pair<double, double> detection_scores(const std::vector<MatchResult>& results) {
  long matched = 0, total_gt = 0, total_pred = 0;
  for (const MatchResult& r : results) {
    matched += r.matched();
    total_gt += r.matched() + r.unmatched_gt;
    total_pred += r.matched() + r.unmatched_pred;
  }
  const double recall = total_gt ? static_cast<double>(matched) / total_gt : 0.0;
  const double precision = total_pred ? static_cast<double>(matched) / total_pred : 0.0;
  return {recall, precision};
}

std::vector<Prediction> infer_task(const Model& model, const EpisodeTask& task, int t_max) {
  ad::NoGradGuard no_grad;
  std::vector<Image> images;
  images.reserve(task.support.size() + 1);
  for (const Scene& s : task.support) images.push_back(s.image);
  images.push_back(task.query.image);
  const auto fms = shared_forward(images, model.backbone, model.dims);
  std::vector<SupportItem> items;
  for (size_t s = 0; s < task.support.size(); ++s)
    items.push_back({fms[s], task.support[s].labels});
  const PrototypeBank bank = model.prototypes_for(items, task.ways());
  return decode_infer(fms.back(), bank, model.decoder, t_max);
}

namespace {

struct EpisodeOutcome {
  std::vector<int> pred_counts, gt_counts;
  MatchResult match;
  int ways = 0, shots = 0;
};

struct Accumulator {
  std::vector<std::pair<std::vector<int>, std::vector<int>>> counts;
  std::vector<MatchResult> matches;
  int episodes = 0;

  void fold(const EpisodeOutcome& o) {
    counts.emplace_back(o.pred_counts, o.gt_counts);
    matches.push_back(o.match);
    ++episodes;
  }
};

}  // namespace

EvalReport evaluate(const Model& model, const std::vector<EpisodeTask>& pool, double radius,
                    int t_max, int workers) {
  if (workers < 1) workers = 1;
  std::vector<EpisodeOutcome> outcomes(pool.size());
  std::exception_ptr failure = nullptr;

#pragma omp parallel for schedule(dynamic) num_threads(workers) if (workers > 1)
  for (long i = 0; i < static_cast<long>(pool.size()); ++i) {
    try {
      const EpisodeTask& task = pool[i];
      const auto preds = infer_task(model, task, t_max);
      EpisodeOutcome o;
      o.ways = task.ways();
      o.shots = task.shots();
      o.pred_counts.assign(task.ways(), 0);
      o.gt_counts.assign(task.ways(), 0);
      for (const auto& p : preds)
        if (p.cls >= 0 && p.cls < task.ways()) ++o.pred_counts[p.cls];
      for (const auto& l : task.query.labels) ++o.gt_counts[l.cls];
      o.match = match_points(preds, task.query.labels, radius);
      outcomes[i] = std::move(o);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  // Deterministic fold in episode-index order, overall and per bucket.
  Accumulator all;
  std::map<std::pair<int, int>, Accumulator> buckets;
  for (const auto& o : outcomes) {
    all.fold(o);
    buckets[{o.ways, o.shots}].fold(o);
  }

  EvalReport report;
  report.episodes = all.episodes;
  report.radius = radius;
  report.t_max = t_max;
  const CountStats cs = counting_errors(all.counts);
  report.mae = cs.mae;
  report.rmse = cs.rmse;
  std::tie(report.recall, report.precision) = detection_scores(all.matches);
  for (const auto& [key, acc] : buckets) {
    EvalBucket b;
    b.ways = key.first;
    b.shots = key.second;
    b.episodes = acc.episodes;
    const CountStats bcs = counting_errors(acc.counts);
    b.mae = bcs.mae;
    b.rmse = bcs.rmse;
    std::tie(b.recall, b.precision) = detection_scores(acc.matches);
    report.buckets.push_back(b);
  }
  return report;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "episodes=" << episodes << "\n";
  os << "radius=" << radius << "\n";
  os << "t_max=" << t_max << "\n";
  os << "mae=" << mae << "\n";
  os << "rmse=" << rmse << "\n";
  os << "recall=" << recall << "\n";
  os << "precision=" << precision << "\n";
  os << "buckets:\n";
  os << "  ways shots episodes     mae    rmse  recall  precision\n";
  char line[128];
  for (const EvalBucket& b : buckets) {
    std::snprintf(line, sizeof(line), "  %4d %5d %8d %7.3f %7.3f %7.3f %10.3f\n", b.ways,
                  b.shots, b.episodes, b.mae, b.rmse, b.recall, b.precision);
    os << line;
  }
  return os.str();
}

std::string EvalReport::buckets_csv() const {
  std::ostringstream os;
  os << "ways,shots,episodes,mae,rmse,recall,precision\n";
  for (const EvalBucket& b : buckets)
    os << b.ways << ',' << b.shots << ',' << b.episodes << ',' << b.mae << ',' << b.rmse << ','
       << b.recall << ',' << b.precision << "\n";
  return os.str();
}

}  // namespace seqcount
