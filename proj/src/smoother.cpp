#include "frim/smoother.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

#include "frim/common.hpp"

namespace frim {

BSplineBasis::BSplineBasis(double lo, double hi, int n_basis)
    : lo_(lo), hi_(hi), n_basis_(n_basis) {
    if (!(lo < hi)) throw InputError("B-spline domain must satisfy lo < hi");
    if (n_basis < 4) throw InputError("cubic B-spline basis needs at least 4 functions");
    // Clamped knot vector: 4 copies of each boundary, n_basis - 4 interior.
    const int n_interior = n_basis - 4;
    knots_.assign(4, lo);
    for (int i = 1; i <= n_interior; ++i)
        knots_.push_back(lo + (hi - lo) * static_cast<double>(i) /
                                  static_cast<double>(n_interior + 1));
    knots_.insert(knots_.end(), 4, hi);
}

Eigen::RowVectorXd BSplineBasis::at(double s) const {
    s = std::clamp(s, lo_, hi_);
    // Knot span index: largest i with knots_[i] <= s < knots_[i+1], with the
    // right boundary folded into the last non-empty span.
    int span = 3;
    const int last = n_basis_ - 1;
    while (span < last && s >= knots_[static_cast<std::size_t>(span) + 1]) ++span;

    // Cox-de Boor recursion for the 4 basis functions active on the span.
    double n[4] = {1.0, 0.0, 0.0, 0.0};
    double left[4], right[4];
    for (int j = 1; j <= 3; ++j) {
        left[j] = s - knots_[static_cast<std::size_t>(span + 1 - j)];
        right[j] = knots_[static_cast<std::size_t>(span + j)] - s;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }

    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n_basis_);
    for (int k = 0; k < 4; ++k) row[span - 3 + k] = n[k];
    return row;
}

Eigen::MatrixXd BSplineBasis::design(const std::vector<double>& s) const {
    Eigen::MatrixXd b(static_cast<Eigen::Index>(s.size()), n_basis_);
    for (std::size_t i = 0; i < s.size(); ++i)
        b.row(static_cast<Eigen::Index>(i)) = at(s[i]);
    return b;
}

namespace {

// Second-order difference penalty D'D for nb coefficients.
Eigen::MatrixXd difference_penalty(int nb) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(nb - 2, nb);
    for (int r = 0; r < nb - 2; ++r) {
        d(r, r) = 1.0;
        d(r, r + 1) = -2.0;
        d(r, r + 2) = 1.0;
    }
    return d.transpose() * d;
}

struct PenalizedFit {
    Eigen::VectorXd coef;
    double edf = 0.0;
    double gcv = 0.0;
};

PenalizedFit fit_at_lambda(const Eigen::MatrixXd& b, const Eigen::MatrixXd& penalty,
                           const Eigen::VectorXd& y, double lambda) {
    const Eigen::MatrixXd btb = b.transpose() * b;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(btb + lambda * penalty);
    PenalizedFit fit;
    fit.coef = ldlt.solve(b.transpose() * y);
    fit.edf = ldlt.solve(btb).trace();
    const double n = static_cast<double>(y.size());
    const double rss = (y - b * fit.coef).squaredNorm();
    const double denom = n - fit.edf;
    fit.gcv = denom > 1e-8 ? n * rss / (denom * denom)
                           : std::numeric_limits<double>::infinity();
    return fit;
}

}  // namespace

FunctionalCoefficients smooth_coefficients(const Eigen::MatrixXd& beta_by_bin,
                                           const BinLayout& layout,
                                           const SmootherOptions& options) {
    const Eigen::Index m_bins = beta_by_bin.rows();
    const Eigen::Index p = beta_by_bin.cols();
    if (static_cast<std::size_t>(m_bins) != layout.n_bins())
        throw InputError("coefficient rows do not match the bin layout");

    std::vector<double> centers;
    std::vector<Eigen::Index> usable;
    for (Eigen::Index m = 0; m < m_bins; ++m) {
        if (beta_by_bin.row(m).array().isFinite().all()) {
            usable.push_back(m);
            centers.push_back(layout.centers[static_cast<std::size_t>(m)]);
        }
    }
    if (usable.size() < 4)
        throw InputError("smoothing needs at least 4 bins with usable coefficient "
                         "estimates, found " + std::to_string(usable.size()));

    int nb = options.basis_dim;
    if (nb == 0)
        nb = std::clamp(static_cast<int>(std::ceil(static_cast<double>(m_bins) / 2.0)), 4, 35);
    if (nb < 4) throw InputError("basis dimension must be at least 4");

    FunctionalCoefficients out;
    out.basis = BSplineBasis(layout.lo, layout.hi, nb);
    out.coef.resize(nb, p);
    out.lambda.resize(p);
    out.edf.resize(p);

    const Eigen::MatrixXd b = out.basis.design(centers);
    const Eigen::MatrixXd penalty = difference_penalty(nb);

    for (Eigen::Index col = 0; col < p; ++col) {
        Eigen::VectorXd y(static_cast<Eigen::Index>(usable.size()));
        for (std::size_t i = 0; i < usable.size(); ++i)
            y[static_cast<Eigen::Index>(i)] = beta_by_bin(usable[i], col);

        if (options.lambda >= 0.0) {
            const PenalizedFit fit = fit_at_lambda(b, penalty, y, options.lambda);
            out.coef.col(col) = fit.coef;
            out.lambda[col] = options.lambda;
            out.edf[col] = fit.edf;
            continue;
        }

        // GCV over a log-spaced grid.
        int best = -1;
        double best_gcv = std::numeric_limits<double>::infinity();
        PenalizedFit best_fit;
        for (int i = 0; i < options.n_lambda; ++i) {
            const double log10_lambda =
                options.log10_lambda_lo +
                (options.log10_lambda_hi - options.log10_lambda_lo) *
                    static_cast<double>(i) / static_cast<double>(options.n_lambda - 1);
            const double lambda = std::pow(10.0, log10_lambda);
            const PenalizedFit fit = fit_at_lambda(b, penalty, y, lambda);
            if (fit.gcv < best_gcv) {
                best_gcv = fit.gcv;
                best = i;
                best_fit = fit;
                out.lambda[col] = lambda;
            }
        }
        if (best < 0)
            throw ConvergenceError("GCV failed to find a usable penalty for column " +
                                   std::to_string(col));
        if (best == 0 || best == options.n_lambda - 1)
            out.warnings.push_back("GCV optimum for column " + std::to_string(col) +
                                   " sits on the penalty-grid boundary (lambda = " +
                                   std::to_string(out.lambda[col]) + ")");
        out.coef.col(col) = best_fit.coef;
        out.edf[col] = best_fit.edf;
    }
    return out;
}

AdjustedComponents adjusted_random_components(const FunctionalDataset& dataset,
                                              const std::vector<LocalFit>& fits,
                                              const FunctionalCoefficients& coefs) {
    AdjustedComponents ac;
    ac.visit_subject = dataset.visit_subject;
    ac.n_subjects = dataset.n_subjects();
    ac.subject_ids = dataset.subject_ids;
    ac.visit_ids = dataset.visit_ids;
    ac.grid.reserve(fits.size());
    for (const auto& fit : fits) ac.grid.push_back(fit.bin_center);

    ac.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(dataset.n_visits()),
                                          static_cast<Eigen::Index>(fits.size()),
                                          std::numeric_limits<double>::quiet_NaN());
    for (std::size_t m = 0; m < fits.size(); ++m) {
        const LocalFit& fit = fits[m];
        if (!fit.converged) continue;
        const Eigen::VectorXd beta_smooth = coefs.evaluate(fit.bin_center);
        for (std::size_t v = 0; v < dataset.n_visits(); ++v) {
            if (!fit.visit_in_bin[v]) continue;
            ac.values(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(m)) =
                fit.eta_hat[v] - dataset.X.row(static_cast<Eigen::Index>(v)).dot(beta_smooth);
        }
    }
    return ac;
}

}  // namespace frim
