#pragma once

#include "seqcount/gradcheck.hpp"
#include "seqcount/model.hpp"
#include "seqcount/trainer.hpp"

namespace seqcount {

// Small fixture for end-to-end finite-difference verification: a reduced
// model on a 32x32 image (8x8 feature grid) and a 2-way 1-shot episode
// with a 2-step query, so a full parameter sweep stays fast.

ModelDims micro_dims();
Model micro_model(std::uint64_t seed = 7);
EpisodeTask micro_task(std::uint64_t seed = 11);

// Sweeps every parameter entry of the full pipeline (backbone ->
// prototypes -> decoder -> loss) against central differences.
ad::GradCheckReport micro_gradcheck(double step = 1e-5, double tol = 1e-3);

}  // namespace seqcount
