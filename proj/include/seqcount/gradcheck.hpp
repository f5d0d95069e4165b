#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seqcount/tensor.hpp"

namespace seqcount::ad {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  long worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
  std::string summary() const;
};

// Compares the analytic gradient of a deterministic scalar computation
// against central finite differences (f(p+h) - f(p-h)) / 2h for every
// entry of every listed parameter. `f` must rebuild the computation from
// the parameters' current values on each call. Relative error is guarded:
// |a - n| / max(|a|, |n|, denom_floor), so near-zero gradients are judged
// on an absolute scale where finite-difference noise dominates.
// Throws if two evaluations of f at the same point disagree.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double step, double tol, double denom_floor = 1e-2);

}  // namespace seqcount::ad
