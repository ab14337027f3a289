#pragma once

#include <cstdint>

#include "magskin/model.hpp"

namespace magskin {

struct GradCheckReport {
    int seeds = 0;
    std::int64_t checked_values = 0;
    int failures = 0;
    double max_rel_err = 0.0;
    // Worst |analytic - numeric| / tolerance ratio; pass means every value
    // stayed at or below 1.
    double worst_ratio = 0.0;
    double elapsed_s = 0.0;
    bool pass() const { return seeds > 0 && failures == 0; }
};

// Shrunken architecture used for affordable finite-difference sweeps; the
// full model runs the identical kernels.
ModelSpec tiny_model_spec();

// For each seed: random params, input and target (resampled while any
// pre-activation sits within 1e-3 of a ReLU kink or a pooling max is nearly
// tied, where finite differences are invalid), then compares every analytic
// parameter gradient against central differences.
GradCheckReport run_gradcheck(int n_seeds = 100, double h = 1e-5, double rel_tol = 1e-6,
                              double abs_tol = 1e-9, std::uint64_t base_seed = 1234);

} // namespace magskin
