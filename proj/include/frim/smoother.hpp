#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "frim/core_data.hpp"
#include "frim/local_glmm.hpp"

namespace frim {

// Cubic B-spline basis on [lo, hi] with clamped (repeated) boundary knots
// and equally spaced interior knots.  n_basis >= 4.
class BSplineBasis {
public:
    BSplineBasis() = default;
    BSplineBasis(double lo, double hi, int n_basis);

    int size() const { return n_basis_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }

    // Row of basis values at s (s is clamped to [lo, hi]).
    Eigen::RowVectorXd at(double s) const;
    Eigen::MatrixXd design(const std::vector<double>& s) const;

private:
    double lo_ = 0.0, hi_ = 1.0;
    int n_basis_ = 0;
    std::vector<double> knots_;
};

struct SmootherOptions {
    // 0 means automatic: clamp(ceil(M / 2), 4, 35) where M is the number of
    // bins in the layout.
    int basis_dim = 0;
    // Negative means select by generalized cross-validation on a log-spaced
    // grid; a non-negative value fixes the penalty for every column.
    double lambda = -1.0;
    double log10_lambda_lo = -8.0;
    double log10_lambda_hi = 8.0;
    int n_lambda = 81;
};

// Smoothed coefficient functions: one penalized B-spline fit per covariate
// column (second-order difference penalty).
struct FunctionalCoefficients {
    BSplineBasis basis;
    Eigen::MatrixXd coef;               // n_basis x p
    std::vector<std::string> names;     // covariate names
    Eigen::VectorXd lambda;             // selected penalty per column
    Eigen::VectorXd edf;                // effective degrees of freedom per column
    std::vector<std::string> warnings;  // e.g. GCV optimum on the grid boundary

    // beta~(s): p smoothed coefficient values.
    Eigen::VectorXd evaluate(double s) const { return (basis.at(s) * coef).transpose(); }
    // n x p matrix of beta~ over a grid.
    Eigen::MatrixXd evaluate(const std::vector<double>& grid) const {
        return basis.design(grid) * coef;
    }
};

// Smooths the per-bin coefficient estimates across bin centers.  Rows of
// `beta_by_bin` (M x p, aligned with layout.centers) that contain NaN are
// treated as missing bins and excluded; at least four usable bins are
// required.  The basis lives on the full [layout.lo, layout.hi] domain so
// the result can be evaluated anywhere on it.
FunctionalCoefficients smooth_coefficients(const Eigen::MatrixXd& beta_by_bin,
                                           const BinLayout& layout,
                                           const SmootherOptions& options = SmootherOptions());

// Adjusted random components on the bin-center grid: for every visit with a
// prediction in bin m, eta_hat_ij(c_m) - x_ij' beta~(c_m); NaN marks
// (visit, bin) cells that are missing or whose local fit failed.
struct AdjustedComponents {
    std::vector<double> grid;     // bin centers
    Eigen::MatrixXd values;       // n_visits x M, NaN = missing
    std::vector<int> visit_subject;
    std::size_t n_subjects = 0;
    std::vector<std::string> subject_ids, visit_ids;
};

AdjustedComponents adjusted_random_components(const FunctionalDataset& dataset,
                                              const std::vector<LocalFit>& fits,
                                              const FunctionalCoefficients& coefs);

}  // namespace frim
