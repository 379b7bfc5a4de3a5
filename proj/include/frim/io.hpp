#pragma once

#include <string>

#include "frim/sampler.hpp"
#include "frim/smoother.hpp"

namespace frim {

// Binary posterior-draws container, little-endian on disk (magic "FRIMDRW1").
// The round trip is exact: read_draws_binary(write_draws_binary(d)) rebuilds a
// PosteriorDraws whose summaries match the in-memory object bit for bit.
void write_draws_binary(const PosteriorDraws& draws, const std::string& path);
PosteriorDraws read_draws_binary(const std::string& path);

// Long-format CSV exports.  `block` filters the draws table:
//   "scores"     xi and zeta columns
//   "variances"  variance components (and sigma2 for Gaussian fits)
//   "all"        both
void write_draws_csv(const PosteriorDraws& draws, const std::string& path,
                     const std::string& block = "all");

void write_bands_csv(const std::vector<CredibleBands>& bands, const std::string& path);

// Fixed-effect curves evaluated on a grid: one row per grid point, one column
// per coefficient.
void write_beta_csv(const FunctionalCoefficients& coefs, const std::vector<double>& grid,
                    const std::string& path);

}  // namespace frim
