#pragma once

#include <vector>

namespace frim {

// Split-chain potential scale reduction factor.  Each element of `chains` is
// one chain's draws for a single scalar quantity; every chain is split in
// half before the between/within comparison so that a trending single chain
// is still flagged.  Returns 1.0 for perfectly mixed (or constant) draws.
double split_rhat(const std::vector<std::vector<double>>& chains);

// Effective sample size across split chains using the initial monotone
// positive sequence estimator on the pooled autocorrelations.
double effective_sample_size(const std::vector<std::vector<double>>& chains);

// Monte Carlo standard error of the posterior mean: sd / sqrt(ESS).
double mcse_mean(const std::vector<std::vector<double>>& chains);

}  // namespace frim
