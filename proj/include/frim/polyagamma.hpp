#pragma once

#include <cmath>

#include "frim/rng.hpp"

namespace frim {

// Exact draw from the Polya-Gamma distribution PG(1, c) by the alternating-
// series rejection method (proposal mixture of a truncated inverse-Gaussian
// and an exponential tail).  Used for the logistic-likelihood augmentation:
// given omega ~ PG(1, eta), the Bernoulli contribution becomes Gaussian in
// eta with precision omega and pseudo-observation (y - 1/2) / omega.
double pg_draw(Rng& rng, double c);

// E[PG(1, c)] = tanh(c/2) / (2c), with the c -> 0 limit 1/4.
inline double pg_mean(double c) {
    const double z = std::abs(c);
    if (z < 1e-8) return 0.25 - z * z / 48.0;
    return std::tanh(z / 2.0) / (2.0 * z);
}

}  // namespace frim
