#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "frim/core_data.hpp"

namespace frim {

// Controls for one local fit.  Variances are optimized on the log scale
// within [var_lower, var_upper]; the outer loop stops on a relative change
// of the objective below rel_tol or a projected-gradient infinity norm
// below grad_tol.
struct GlmmControls {
    double var_lower = 1e-8;
    double var_upper = 1e8;
    double rel_tol = 1e-8;
    double grad_tol = 1e-6;
    int max_outer = 200;
    int max_inner = 50;

    // When set, the variance components are held fixed and only the mean
    // structure is estimated.  For the Gaussian family the two values are
    // ratios to the residual variance (which is still profiled out); for
    // the binomial family they are absolute variances.
    bool fixed_variances = false;
    double fixed_var_subject = 1.0;
    double fixed_var_visit = 1.0;
};

// Result of fitting the two-level random-intercept GLMM to one bin:
//   g(E[y_ijl]) = x_ij' beta + a_i + b_ij,  a_i ~ N(0, var_subject),
//                                           b_ij ~ N(0, var_visit).
// Predictions are reported for every visit of the input dataset;
// eta_hat is NaN for visits with no records in the bin (and a_hat is 0 for
// subjects with no visit in the bin), with the *_in_bin flags telling the
// two cases apart.
struct LocalFit {
    std::size_t bin_index = 0;
    double bin_center = 0.0;

    bool converged = false;
    int iterations = 0;

    Eigen::VectorXd beta;
    double var_subject = 0.0;
    double var_visit = 0.0;
    double var_residual = 0.0;  // NaN for the binomial family

    std::vector<double> a_hat;        // per subject
    std::vector<double> b_hat;        // per visit
    std::vector<double> eta_hat;      // per visit, NaN when absent
    std::vector<char> subject_in_bin; // per subject
    std::vector<char> visit_in_bin;   // per visit

    std::vector<double> objective_trace;  // accepted outer objective values
    std::vector<std::string> warnings;
};

// Fits the local GLMM for bin `bin_index`.  Gaussian outcomes use REML with
// the residual variance profiled out; binomial outcomes use the Laplace
// approximation around the joint mode of (beta, a, b).  Pure function: no
// global state, deterministic, safe to run for different bins concurrently.
LocalFit fit_local_glmm(const FunctionalDataset& dataset, const BinnedDataset& binned,
                        std::size_t bin_index, const GlmmControls& controls = GlmmControls());

}  // namespace frim
