#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "frim/core_data.hpp"
#include "frim/pipeline.hpp"
#include "frim/rng.hpp"

namespace frim {

// Which visit-level eigenbasis the generator uses.  The subject level is
// always the four orthonormal trigonometric functions
//   sqrt(2) sin(4 pi s), sqrt(2) cos(4 pi s), sqrt(2) sin(6 pi s), sqrt(2) cos(6 pi s).
// trig_basis pairs them with the next trigonometric block (orthogonal across
// levels); legendre_basis uses the first four shifted Legendre polynomials
// (orthonormal within the level but correlated with the subject level).
enum class VisitBasis { trig_basis, legendre_basis };

struct SimConfig {
    Family family = Family::gaussian;
    VisitBasis visit_basis = VisitBasis::trig_basis;
    int n_subjects = 100;
    int n_visits = 5;       // visits per subject
    int grid_len = 100;     // L; locations s_l = l / L
    int k1 = 4, k2 = 4;     // component counts (eigenvalues 0.5^(k-1))
    double sigma2 = 1.0;    // Gaussian noise variance

    // Contiguous-block missingness: each visit independently receives a
    // missing block with probability visit_prob; the block covers the
    // half-open interval [s_a, s_a + frac) with s_a drawn uniformly from the
    // grid (truncated at the right edge).
    double missing_visit_prob = 0.0;
    double missing_frac = 0.0;
};

// Ground truth retained next to a simulated dataset.
struct SimTruth {
    std::vector<double> grid;   // s_1 .. s_L
    Eigen::MatrixXd phi, psi;   // L x K true eigenfunctions
    Eigen::VectorXd lambda1, lambda2;
    Eigen::MatrixXd xi;         // I x K1 scores
    Eigen::MatrixXd zeta;       // n_visits x K2 scores
    Eigen::MatrixXd r;          // n_visits x L latent random deviations
    Eigen::MatrixXd eta;        // n_visits x L linear predictor
    Eigen::VectorXd beta;       // L, functional intercept
};

struct SimulatedData {
    FunctionalDataset dataset;
    SimTruth truth;
    // Missingness mask aligned with (visit, grid index): 1 = removed.
    std::vector<std::vector<std::uint8_t>> removed;
};

// Generates a complete dataset and then applies the missingness mechanism.
// Scores come from the stream derived from score_seed, everything else
// (outcomes, missingness) from noise_seed, so a study can hold the scores
// fixed across replicates by reusing score_seed.
SimulatedData generate_dataset(const SimConfig& config, std::uint64_t score_seed,
                               std::uint64_t noise_seed);
inline SimulatedData generate_dataset(const SimConfig& config, std::uint64_t seed) {
    return generate_dataset(config, seed, seed + 1);
}

// Applies the block-missingness mechanism to a complete simulated dataset.
// Exposed separately so the mechanism can be tested and reused; updates
// `removed` and returns the thinned dataset.
FunctionalDataset inject_missingness(const FunctionalDataset& complete,
                                     const SimTruth& truth, double visit_prob, double frac,
                                     Rng& rng, std::vector<std::vector<std::uint8_t>>& removed);

struct StudyConfig {
    SimConfig sim;
    PipelineSettings pipeline;
    int replicates = 20;
    std::uint64_t seed = 0;
    bool fixed_scores = true;  // same latent scores in every replicate
    double alpha = 0.05;
    int workers = 1;
};

struct StudyResult {
    double mpcp = 0.0;          // over every (replicate, visit, grid point)
    double mpcp_masked = 0.0;   // over removed cells only; NaN without missingness
    std::vector<double> replicate_mpcp;
    int n_ok = 0;
    int n_failed = 0;
    std::vector<std::string> failures;
};

// Repeated generate -> fit -> band -> coverage loop for the subject-visit
// random deviations r_ij(s) (credible bands at level `combined` on the
// generator grid).  A replicate whose pipeline throws is recorded and
// excluded; more than 20% failed replicates fails the whole study.
StudyResult run_coverage_study(const StudyConfig& config);

}  // namespace frim
