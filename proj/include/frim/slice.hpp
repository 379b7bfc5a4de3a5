#pragma once

#include "frim/common.hpp"
#include "frim/rng.hpp"

namespace frim {

// One update of a univariate slice sampler with stepping-out and shrinkage.
// `log_density` may be unnormalized.  Leaves the target invariant for any
// bracket width w > 0, so w only affects mixing, not correctness.
template <typename LogDensity>
double slice_sample(double x0, const LogDensity& log_density, Rng& rng,
                    double w = 1.0, int max_step_out = 100) {
    const double log_y = log_density(x0) - rng.exponential();

    double lo = x0 - w * rng.uniform();
    double hi = lo + w;
    for (int i = 0; i < max_step_out && log_density(lo) > log_y; ++i) lo -= w;
    for (int i = 0; i < max_step_out && log_density(hi) > log_y; ++i) hi += w;

    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(lo, hi);
        if (log_density(x) > log_y) return x;
        if (x < x0)
            lo = x;
        else
            hi = x;
    }
    throw ConvergenceError("slice sampler failed to find an acceptable point");
}

}  // namespace frim
