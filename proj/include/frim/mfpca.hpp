#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "frim/smoother.hpp"

namespace frim {

// How (visit, bin) cells with no estimate enter the covariance moments.
enum class MissingPolicy {
    drop_incomplete_visits,  // a visit with any missing bin is excluded entirely
    pairwise_complete,       // each (m, m') average uses the visits observed at both
};

// Method-of-moments covariance estimates of the two-level decomposition
//   r_ij(s) = x_i(s) + w_ij(s) + noise:
// g_total  = Cov[r_ij(s), r_ij(s')]          (same visit, noise removed on the diagonal)
// g_between = Cov[r_ij(s), r_ij'(s')], j != j' (subject level)
// g_within = g_total - g_between              (visit level)
struct CovarianceEstimates {
    std::vector<double> grid;
    Eigen::MatrixXd g_total;
    Eigen::MatrixXd g_between;
    Eigen::MatrixXd g_within;
    Eigen::VectorXd mu;          // per-column grand mean removed before the moments
    double sigma2_noise = 0.0;   // diagonal nugget estimate (floored at zero)
    std::size_t n_visits_used = 0;
    std::size_t n_subjects_used = 0;  // subjects contributing >= 2 usable visits
    std::vector<std::string> warnings;
};

CovarianceEstimates estimate_covariances(const AdjustedComponents& ac, MissingPolicy policy);

// Eigendecomposition of a covariance on `grid` under the trapezoid-rule inner
// product: eigenfunctions satisfy sum_m w_m f_k(m) f_l(m) = delta_kl, values
// are sorted descending, and each eigenvector is signed so that its largest-
// magnitude element is positive.
struct EigenDecomposition {
    Eigen::VectorXd values;     // all eigenvalues, descending
    Eigen::MatrixXd functions;  // M x M, column k pairs with values[k]
};

EigenDecomposition eigendecompose(const Eigen::MatrixXd& g, const std::vector<double>& grid);

// Smallest K with cumulative share of the positive spectrum >= pve, capped at
// k_max (negative eigenvalues count for neither numerator nor denominator).
struct Truncation {
    int k = 1;
    double achieved_pve = 0.0;
    bool capped = false;  // k_max bound before pve was reached
};

Truncation truncate_pve(const Eigen::VectorXd& values, double pve, int k_max);

struct MfpcaOptions {
    double pve = 0.95;
    int k_max = 10;
    MissingPolicy policy = MissingPolicy::drop_incomplete_visits;
};

struct MfpcaResult {
    std::vector<double> grid;
    Eigen::MatrixXd phi;       // M x K1 subject-level eigenfunctions
    Eigen::MatrixXd psi;       // M x K2 visit-level eigenfunctions
    Eigen::VectorXd lambda1;   // kept subject-level eigenvalues
    Eigen::VectorXd lambda2;   // kept visit-level eigenvalues
    Eigen::VectorXd spectrum1; // full subject-level spectrum, descending
    Eigen::VectorXd spectrum2; // full visit-level spectrum, descending
    int k1 = 0, k2 = 0;
    double pve1 = 0.0, pve2 = 0.0;
    double sigma2_noise = 0.0;
    Eigen::VectorXd mu;
    std::vector<std::string> warnings;
};

MfpcaResult mfpca(const AdjustedComponents& ac, const MfpcaOptions& options = MfpcaOptions());

}  // namespace frim
