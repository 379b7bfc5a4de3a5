#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "frim/core_data.hpp"
#include "frim/local_glmm.hpp"
#include "frim/mfpca.hpp"
#include "frim/sampler.hpp"
#include "frim/smoother.hpp"

namespace frim {

struct PipelineSettings {
    BinSpec bins;
    GlmmControls glmm;
    SmootherOptions smoother;
    MfpcaOptions pca;
    SamplerConfig sampler;
    int workers = 1;

    // Optional fixed domain for the bin layout; by default the observed
    // location range is used.
    bool has_domain = false;
    double domain_lo = 0.0, domain_hi = 1.0;

    // Optional visit filter for the covariance estimation step only (e.g.
    // training visits): size n_visits, nonzero = include.  The local fits
    // and the posterior sampler always use every visit.
    std::vector<std::uint8_t> pca_visit_filter;
};

struct StageTiming {
    std::string name;
    double seconds = 0.0;
};

struct FitResult {
    BinnedDataset binned;
    std::vector<LocalFit> fits;
    std::size_t n_failed_bins = 0;
    FunctionalCoefficients beta;
    AdjustedComponents adjusted;
    MfpcaResult pca;
    SamplerInputs design;
    PosteriorDraws draws;
    std::vector<StageTiming> timings;
    std::vector<std::string> warnings;
};

// The full estimation path: bin, fit a local GLMM per bin (in parallel),
// smooth the fixed-effect coefficients, form adjusted random components,
// estimate the two-level eigenstructure, and sample the posterior of the
// scores conditional on it.
FitResult fit_frim(const FunctionalDataset& dataset, const PipelineSettings& settings);

}  // namespace frim
