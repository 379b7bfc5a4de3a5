#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "frim/core_data.hpp"
#include "frim/mfpca.hpp"
#include "frim/smoother.hpp"

namespace frim {

// Everything the posterior sampler needs, with the eigenfunctions linearly
// interpolated from the bin-center grid to every record location and the
// smoothed fixed-effect contribution folded into a per-record offset.  The
// model conditioned on is
//   g(E[y_r]) = offset_r + phi(s_r)' xi_i + psi(s_r)' zeta_ij,
//   xi_ik ~ N(0, v1_k),  zeta_ijk ~ N(0, v2_k),
// with half-Cauchy(0,1) priors on the precisions 1/v1_k, 1/v2_k (and on the
// Gaussian residual precision).
struct SamplerInputs {
    Family family = Family::gaussian;

    std::size_t n_subjects = 0;
    std::vector<int> visit_subject;
    std::vector<std::string> subject_ids, visit_ids;

    std::vector<std::uint32_t> rec_visit;
    std::vector<double> rec_y;
    std::vector<double> rec_offset;
    Eigen::MatrixXd phi_rec;  // n_records x K1
    Eigen::MatrixXd psi_rec;  // n_records x K2

    std::vector<double> grid;  // bin centers
    Eigen::MatrixXd phi_grid;  // M x K1
    Eigen::MatrixXd psi_grid;  // M x K2
    Eigen::VectorXd lambda1, lambda2;  // eigenvalue scales, used to initialize
    double sigma2_init = 1.0;

    std::size_t n_visits() const { return visit_subject.size(); }
    std::size_t n_records() const { return rec_y.size(); }
    int k1() const { return static_cast<int>(phi_rec.cols()); }
    int k2() const { return static_cast<int>(psi_rec.cols()); }
};

SamplerInputs build_design(const FunctionalDataset& dataset, const MfpcaResult& mfpca_result,
                           const FunctionalCoefficients& coefs);

struct SamplerConfig {
    int chains = 4;
    int warmup = 1000;
    int draws = 2000;  // kept draws per chain
    std::uint64_t seed = 0;
    int workers = 1;
    // Hold every variance parameter at its initial value (the score updates
    // are then exact conjugate Gibbs draws; used for calibration checks).
    bool fix_variances = false;
    // Optional explicit initial variances; empty means the eigenvalue scales
    // from the inputs.
    Eigen::VectorXd init_var_subject, init_var_visit;
    double init_sigma2 = -1.0;  // < 0 means inputs.sigma2_init
};

struct ParamDiagnostic {
    std::string name;
    double rhat = 1.0;
    double ess = 0.0;
};

struct PosteriorDraws {
    Family family = Family::gaussian;
    int chains = 0;
    std::size_t draws_per_chain = 0;
    std::size_t n_subjects = 0, n_visits = 0;
    int k1 = 0, k2 = 0;

    std::vector<std::string> subject_ids, visit_ids;
    std::vector<int> visit_subject;
    std::vector<double> grid;
    Eigen::MatrixXd phi_grid, psi_grid;

    // Per chain, one row per kept draw.  Score columns are laid out
    // entity-major: xi column i*k1 + k, zeta column j*k2 + k.
    std::vector<Eigen::MatrixXd> xi;
    std::vector<Eigen::MatrixXd> zeta;
    std::vector<Eigen::MatrixXd> var_subject;  // draws x k1
    std::vector<Eigen::MatrixXd> var_visit;    // draws x k2
    std::vector<Eigen::VectorXd> sigma2;       // Gaussian only; empty otherwise

    // Split R-hat / ESS for every variance-type parameter.
    std::vector<ParamDiagnostic> diagnostics;
    double max_variance_rhat = 1.0;
    std::vector<std::string> warnings;

    std::size_t total_draws() const { return draws_per_chain * static_cast<std::size_t>(chains); }
};

// Blocked Gibbs sampler: subject score vectors, then visit score vectors
// (exact multivariate-normal conditionals; for the binomial family after a
// Polya-Gamma augmentation draw per record), then one slice-sampling update
// per variance parameter.  Chains run independently from seed-derived
// streams, so results do not depend on how chains are scheduled.
PosteriorDraws run_mcmc(const SamplerInputs& inputs, const SamplerConfig& config);

enum class EffectLevel { subject, subject_visit, combined };

struct CredibleBands {
    std::string subject_id;
    std::string visit_id;  // empty at the subject level
    std::vector<double> grid;
    std::vector<double> mean, lower, upper;
    double alpha = 0.05;
};

// Pointwise posterior mean and equal-tailed 1-alpha band for every entity at
// the requested level, on `grid` (empty = the sampler's bin-center grid;
// eigenfunctions are linearly interpolated elsewhere).
std::vector<CredibleBands> summarize_random_effects(const PosteriorDraws& draws,
                                                    EffectLevel level, double alpha = 0.05,
                                                    const std::vector<double>& grid = {});

// Same, for one entity addressed by its labels; unknown labels are errors.
// visit_id is ignored at the subject level.
CredibleBands summarize_one(const PosteriorDraws& draws, EffectLevel level,
                            const std::string& subject_id, const std::string& visit_id,
                            double alpha = 0.05, const std::vector<double>& grid = {});

// Piecewise-linear interpolation of the rows of `values` (aligned with the
// sorted grid) at location s, clamped at the ends; exact at grid nodes.
Eigen::RowVectorXd interp_row(const std::vector<double>& grid, const Eigen::MatrixXd& values,
                              double s);

}  // namespace frim
