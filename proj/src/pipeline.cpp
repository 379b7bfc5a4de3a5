#include "frim/pipeline.hpp"

#include <Eigen/QR>
#include <chrono>
#include <cmath>
#include <limits>

#include "frim/parallel.hpp"

namespace frim {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Full-column-rank check on the visit-level design; a failure here would
// otherwise surface as an obscure error inside every single bin.
void check_global_rank(const FunctionalDataset& dataset) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dataset.X);
    qr.setThreshold(1e-10);
    if (qr.rank() == dataset.X.cols()) return;
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < dataset.X.cols(); ++j) {
        if (!names.empty()) names += ", ";
        names += dataset.covariate_names[static_cast<std::size_t>(perm[j])];
    }
    throw InputError("design matrix is rank deficient; drop or combine collinear covariates (" +
                     names + ")");
}

}  // namespace

FitResult fit_frim(const FunctionalDataset& dataset, const PipelineSettings& settings) {
    if (!settings.pca_visit_filter.empty() &&
        settings.pca_visit_filter.size() != dataset.n_visits())
        throw InputError("covariance visit filter must have one entry per visit");
    check_global_rank(dataset);

    FitResult result;
    auto stage_start = Clock::now();
    auto close_stage = [&](const char* name) {
        result.timings.push_back({name, seconds_since(stage_start)});
        stage_start = Clock::now();
    };

    // 1. Bins.
    const double lo = settings.has_domain ? settings.domain_lo : dataset.s_min;
    const double hi = settings.has_domain ? settings.domain_hi : dataset.s_max;
    result.binned = assign_bins(dataset, make_bins(lo, hi, settings.bins));
    const std::size_t M = result.binned.n_bins();
    close_stage("bin");

    // 2. One local mixed model per bin.  A bin that cannot be fit (too few
    // records, within-bin collinearity, separation) is dropped with a
    // warning; the smoother bridges the gap.
    result.fits.resize(M);
    parallel_for(M, settings.workers, [&](std::size_t m) {
        try {
            result.fits[m] = fit_local_glmm(dataset, result.binned, m, settings.glmm);
        } catch (const InputError& e) {
            LocalFit failed;
            failed.bin_index = m;
            failed.bin_center = result.binned.layout.centers[m];
            failed.converged = false;
            failed.warnings.push_back(e.what());
            result.fits[m] = std::move(failed);
        }
    });
    const Eigen::Index p = dataset.n_covariates();
    Eigen::MatrixXd beta_by_bin(static_cast<Eigen::Index>(M), p);
    beta_by_bin.setConstant(std::numeric_limits<double>::quiet_NaN());
    for (std::size_t m = 0; m < M; ++m) {
        const LocalFit& fit = result.fits[m];
        if (fit.converged)
            beta_by_bin.row(static_cast<Eigen::Index>(m)) = fit.beta.transpose();
        else
            ++result.n_failed_bins;
        for (const auto& w : fit.warnings)
            result.warnings.push_back("bin " + std::to_string(m + 1) + ": " + w);
    }
    if (result.n_failed_bins == M)
        throw ConvergenceError("no bin produced a usable local fit");
    close_stage("local-fits");

    // 3. Smooth the fixed-effect coefficients across bins.
    result.beta = smooth_coefficients(beta_by_bin, result.binned.layout, settings.smoother);
    result.beta.names = dataset.covariate_names;
    result.warnings.insert(result.warnings.end(), result.beta.warnings.begin(),
                           result.beta.warnings.end());
    close_stage("smooth");

    // 4. Adjusted random components on the bin-center grid.
    result.adjusted = adjusted_random_components(dataset, result.fits, result.beta);
    close_stage("adjust");

    // 5. Two-level eigenstructure.  A bin without a usable local fit has no
    // adjusted values for any visit, so it carries no covariance information
    // and is excluded from the eigenstructure grid (the smoothed coefficient
    // curves already bridge it; the sampler interpolates the eigenfunctions
    // wherever records fall).  An optional visit filter further restricts
    // the covariance estimation (only) to a subset of visits.
    AdjustedComponents pca_input = result.adjusted;
    if (result.n_failed_bins > 0) {
        std::vector<std::size_t> usable;
        for (std::size_t m = 0; m < M; ++m)
            if (result.fits[m].converged) usable.push_back(m);
        pca_input.grid.clear();
        pca_input.values.resize(result.adjusted.values.rows(),
                                static_cast<Eigen::Index>(usable.size()));
        for (std::size_t j = 0; j < usable.size(); ++j) {
            pca_input.grid.push_back(result.adjusted.grid[usable[j]]);
            pca_input.values.col(static_cast<Eigen::Index>(j)) =
                result.adjusted.values.col(static_cast<Eigen::Index>(usable[j]));
        }
        result.warnings.push_back(std::to_string(result.n_failed_bins) +
                                  " bin(s) without a usable local fit were excluded from the "
                                  "covariance grid");
    }
    for (std::size_t v = 0; v < settings.pca_visit_filter.size(); ++v)
        if (settings.pca_visit_filter[v] == 0)
            pca_input.values.row(static_cast<Eigen::Index>(v))
                .setConstant(std::numeric_limits<double>::quiet_NaN());
    result.pca = mfpca(pca_input, settings.pca);
    result.warnings.insert(result.warnings.end(), result.pca.warnings.begin(),
                           result.pca.warnings.end());
    close_stage("fpca");

    // 6. Posterior sampling conditional on the estimated eigenstructure.
    result.design = build_design(dataset, result.pca, result.beta);
    close_stage("design");

    SamplerConfig sampler_config = settings.sampler;
    sampler_config.workers = settings.workers;
    result.draws = run_mcmc(result.design, sampler_config);
    result.warnings.insert(result.warnings.end(), result.draws.warnings.begin(),
                           result.draws.warnings.end());
    close_stage("mcmc");

    return result;
}

}  // namespace frim
