#include "frim/mfpca.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

#include "frim/common.hpp"
#include "frim/stats.hpp"

namespace frim {
namespace {

// Extrapolates the off-diagonal neighbourhood of the total covariance onto
// the diagonal point (c_m, c_m), used to split the estimation-error nugget
// off the raw diagonal.  The surface is modelled locally in the rotated
// coordinates u = (s + t)/2 - c_m (along the diagonal) and v = |t - s|/2
// (across it) as a + b*u + c*v^2 + d*v^4 — even in v because the covariance
// is symmetric.  The quartic term matters: a smooth component A*cos(2w*v)
// extrapolated quadratically undershoots the diagonal by about A*w^4*v^4/6
// at every bin, and that one-sided miss would read as noise.  Three lag
// bands (|t - s| up to three grid steps) make the quartic identifiable
// while keeping |u| within about one step, so genuine curvature along the
// diagonal stays out of the fit; what little the window cannot separate
// alternates in sign across bins and cancels out of the pooled nugget.  A
// sparse neighbourhood drops terms (quartic first, slope next — the v^2
// extrapolation carries the actual denoising) down to a plain mean.
double denoised_diagonal(const Eigen::MatrixXd& g, const std::vector<double>& grid,
                         Eigen::Index m) {
    const Eigen::Index m_bins = g.rows();
    const double c = grid[static_cast<std::size_t>(m)];
    double step = 0.0;
    if (m > 0) step = std::max(step, c - grid[static_cast<std::size_t>(m - 1)]);
    if (m + 1 < m_bins) step = std::max(step, grid[static_cast<std::size_t>(m + 1)] - c);
    if (step <= 0.0) return g(m, m);
    const double u_max = 1.05 * step;
    const double v_max = 1.55 * step;

    std::vector<double> us, vs, ys;
    const auto gather = [&](double reach) {
        us.clear();
        vs.clear();
        ys.clear();
        const Eigen::Index lo = std::max<Eigen::Index>(0, m - 3);
        const Eigen::Index hi = std::min(m_bins - 1, m + 3);
        for (Eigen::Index i = lo; i <= hi; ++i)
            for (Eigen::Index j = i + 1; j <= hi; ++j) {
                const double si = grid[static_cast<std::size_t>(i)];
                const double sj = grid[static_cast<std::size_t>(j)];
                const double u = 0.5 * (si + sj) - c;
                const double v = 0.5 * (sj - si);
                if (v > v_max || std::abs(u) > reach) continue;
                us.push_back(u);
                vs.push_back(v);
                ys.push_back(g(i, j));
            }
    };
    gather(u_max);
    // A grid edge sees pairs on one side only; reach a little further along
    // the diagonal so the slope stays identifiable there.
    if (ys.size() < 4) gather(1.6 * step);
    if (ys.empty()) return g(m, m);

    const auto fit = [&](int terms) -> double {
        Eigen::MatrixXd A(static_cast<Eigen::Index>(ys.size()), terms);
        for (std::size_t i = 0; i < ys.size(); ++i) {
            const Eigen::Index r = static_cast<Eigen::Index>(i);
            const double z = vs[i] * vs[i];
            A(r, 0) = 1.0;
            if (terms > 1) A(r, 1) = z;
            if (terms > 2) A(r, 2) = us[i];
            if (terms > 3) A(r, 3) = z * z;
        }
        const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        if (qr.rank() < terms) return std::numeric_limits<double>::quiet_NaN();
        const Eigen::VectorXd coef = qr.solve(
            Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size())));
        return coef[0];
    };
    for (int terms : {4, 3, 2}) {
        if (ys.size() < static_cast<std::size_t>(terms)) continue;
        const double a = fit(terms);
        if (std::isfinite(a)) return a;
    }
    double s = 0.0;
    for (double y : ys) s += y;
    return s / static_cast<double>(ys.size());
}

}  // namespace

CovarianceEstimates estimate_covariances(const AdjustedComponents& ac, MissingPolicy policy) {
    const Eigen::Index n_visits = ac.values.rows();
    const Eigen::Index m_bins = ac.values.cols();
    if (m_bins < 2) throw InputError("covariance estimation needs at least two bins");

    // Visits entering the moments.  Under the drop policy a visit with any
    // missing bin is excluded outright; under pairwise completion every
    // visit stays and each (m, m') moment uses whatever pairs it observes.
    // At zero missingness the two policies therefore run through the exact
    // same arithmetic.
    std::vector<Eigen::Index> included;
    for (Eigen::Index v = 0; v < n_visits; ++v) {
        const auto row = ac.values.row(v).array();
        const bool complete = row.isFinite().all();
        const bool any = row.isFinite().any();
        if (policy == MissingPolicy::drop_incomplete_visits ? complete : any)
            included.push_back(v);
    }
    if (included.size() < 2)
        throw InputError(std::string("covariance estimation needs at least two usable "
                                     "visits") +
                         (policy == MissingPolicy::drop_incomplete_visits
                              ? "; consider the pairwise-complete missing policy"
                              : ""));

    CovarianceEstimates est;
    est.grid = ac.grid;
    est.n_visits_used = included.size();

    // Masked value matrix: NaN -> 0 with a parallel 0/1 mask, so every moment
    // below is a plain matrix product.
    const Eigen::Index n_inc = static_cast<Eigen::Index>(included.size());
    Eigen::MatrixXd r0(n_inc, m_bins);
    Eigen::MatrixXd mask(n_inc, m_bins);
    for (Eigen::Index i = 0; i < n_inc; ++i)
        for (Eigen::Index m = 0; m < m_bins; ++m) {
            const double x = ac.values(included[static_cast<std::size_t>(i)], m);
            const bool ok = std::isfinite(x);
            mask(i, m) = ok ? 1.0 : 0.0;
            r0(i, m) = ok ? x : 0.0;
        }

    est.mu.resize(m_bins);
    for (Eigen::Index m = 0; m < m_bins; ++m) {
        const double cnt = mask.col(m).sum();
        if (cnt == 0.0)
            throw InputError("bin " + std::to_string(m) +
                             " has no usable visits; covariance moments are undefined");
        est.mu[m] = r0.col(m).sum() / cnt;
    }
    r0 = (r0 - Eigen::VectorXd::Ones(n_inc) * est.mu.transpose()).cwiseProduct(mask);

    const Eigen::MatrixXd pair_count = mask.transpose() * mask;
    const Eigen::MatrixXd sum_total = r0.transpose() * r0;
    if ((pair_count.array() < 1.0).any())
        throw InputError("some bin pairs are never observed in the same visit; "
                         "the total covariance is undefined (wider bins or more "
                         "data are needed)");
    est.g_total = sum_total.cwiseQuotient(pair_count);

    // Subject level from cross-visit products: for subject i with visit sums
    // S_i, sum_i S_i S_i' - sum_v r_v r_v' counts exactly the j != j' pairs.
    Eigen::MatrixXd num = -sum_total;
    Eigen::MatrixXd den = -pair_count;
    std::vector<Eigen::VectorXd> subj_sum(ac.n_subjects,
                                          Eigen::VectorXd::Zero(m_bins));
    std::vector<Eigen::VectorXd> subj_cnt(ac.n_subjects,
                                          Eigen::VectorXd::Zero(m_bins));
    std::vector<int> subj_visits(ac.n_subjects, 0);
    for (Eigen::Index i = 0; i < n_inc; ++i) {
        const std::size_t subj = static_cast<std::size_t>(
            ac.visit_subject[static_cast<std::size_t>(included[static_cast<std::size_t>(i)])]);
        subj_sum[subj] += r0.row(i).transpose();
        subj_cnt[subj] += mask.row(i).transpose();
        ++subj_visits[subj];
    }
    for (std::size_t subj = 0; subj < ac.n_subjects; ++subj) {
        if (subj_visits[subj] == 0) continue;
        num.noalias() += subj_sum[subj] * subj_sum[subj].transpose();
        den.noalias() += subj_cnt[subj] * subj_cnt[subj].transpose();
        if (subj_visits[subj] >= 2) ++est.n_subjects_used;
    }
    if (est.n_subjects_used == 0)
        throw InputError("no subject contributes two usable visits; the subject-level "
                         "covariance is not identified");
    if ((den.array() < 1.0).any())
        throw InputError("some bin pairs are never observed in two visits of the same "
                         "subject; the subject-level covariance is undefined");
    est.g_between = num.cwiseQuotient(den);
    est.g_between = 0.5 * (est.g_between + est.g_between.transpose()).eval();
    est.g_total = 0.5 * (est.g_total + est.g_total.transpose()).eval();

    // Nugget: the local-fit estimation error is independent across bins, so
    // it inflates only the diagonal of g_total.  Extrapolate the off-diagonal
    // neighbourhood onto each diagonal point, attribute the average excess to
    // noise, and carry the smoothed diagonal forward in place of the raw one.
    Eigen::VectorXd smooth_diag(m_bins);
    for (Eigen::Index m = 0; m < m_bins; ++m)
        smooth_diag[m] = denoised_diagonal(est.g_total, est.grid, m);
    double nugget = (est.g_total.diagonal() - smooth_diag).mean();
    if (nugget < 0.0) {
        est.warnings.push_back("noise variance extrapolated negative (" +
                               std::to_string(nugget) + "); floored at zero");
        nugget = 0.0;
    } else {
        // Straight replacement: the extrapolation errs on either side of the
        // truth from bin to bin, and keeping those errors two-sided leaves
        // the eigenvalues unbiased.  Only negativity is repaired.
        for (Eigen::Index m = 0; m < m_bins; ++m)
            est.g_total(m, m) = std::max(0.0, smooth_diag[m]);
    }
    est.sigma2_noise = nugget;

    est.g_within = est.g_total - est.g_between;
    est.g_within = 0.5 * (est.g_within + est.g_within.transpose()).eval();
    return est;
}

EigenDecomposition eigendecompose(const Eigen::MatrixXd& g, const std::vector<double>& grid) {
    const Eigen::Index m_bins = g.rows();
    if (g.cols() != m_bins) throw InputError("covariance matrix must be square");
    if (static_cast<std::size_t>(m_bins) != grid.size())
        throw InputError("covariance size does not match the grid");

    const std::vector<double> w = trapezoid_weights(grid);
    Eigen::VectorXd sqrt_w(m_bins);
    for (Eigen::Index m = 0; m < m_bins; ++m)
        sqrt_w[m] = std::sqrt(w[static_cast<std::size_t>(m)]);

    // Weighted problem: eigenvectors of W^1/2 G W^1/2 are orthonormal in
    // l2; rescaling by W^-1/2 makes the eigenfunctions orthonormal under
    // the trapezoid inner product while keeping the eigenvalues.
    Eigen::MatrixXd k = sqrt_w.asDiagonal() * g * sqrt_w.asDiagonal();
    k = 0.5 * (k + k.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(k);
    if (solver.info() != Eigen::Success)
        throw Error("eigendecomposition failed to converge");

    EigenDecomposition dec;
    dec.values.resize(m_bins);
    dec.functions.resize(m_bins, m_bins);
    for (Eigen::Index i = 0; i < m_bins; ++i) {
        const Eigen::Index src = m_bins - 1 - i;  // ascending -> descending
        dec.values[i] = solver.eigenvalues()[src];
        dec.functions.col(i) = solver.eigenvectors().col(src).cwiseQuotient(sqrt_w);
        // Sign convention: the largest-magnitude element is positive.
        Eigen::Index arg_max = 0;
        dec.functions.col(i).cwiseAbs().maxCoeff(&arg_max);
        if (dec.functions(arg_max, i) < 0.0) dec.functions.col(i) = -dec.functions.col(i);
    }
    return dec;
}

Truncation truncate_pve(const Eigen::VectorXd& values, double pve, int k_max) {
    if (!(pve > 0.0) || !(pve <= 1.0))
        throw InputError("pve threshold must lie in (0, 1]");
    if (k_max < 1) throw InputError("k_max must be at least 1");

    double positive_sum = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (values[i] > 0.0) positive_sum += values[i];
    if (positive_sum <= 0.0)
        throw InputError("covariance has no positive eigenvalues; nothing to retain");

    Truncation t;
    double cum = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values[i] <= 0.0) break;  // spectrum is descending
        cum += values[i];
        t.k = static_cast<int>(i) + 1;
        t.achieved_pve = cum / positive_sum;
        if (t.achieved_pve >= pve) break;
        if (t.k == k_max) {
            t.capped = true;
            break;
        }
    }
    return t;
}

MfpcaResult mfpca(const AdjustedComponents& ac, const MfpcaOptions& options) {
    const CovarianceEstimates est = estimate_covariances(ac, options.policy);

    MfpcaResult res;
    res.grid = est.grid;
    res.mu = est.mu;
    res.sigma2_noise = est.sigma2_noise;
    res.warnings = est.warnings;

    const EigenDecomposition dec1 = eigendecompose(est.g_between, est.grid);
    const EigenDecomposition dec2 = eigendecompose(est.g_within, est.grid);
    res.spectrum1 = dec1.values;
    res.spectrum2 = dec2.values;

    const Truncation t1 = truncate_pve(dec1.values, options.pve, options.k_max);
    const Truncation t2 = truncate_pve(dec2.values, options.pve, options.k_max);
    res.k1 = t1.k;
    res.k2 = t2.k;
    res.pve1 = t1.achieved_pve;
    res.pve2 = t2.achieved_pve;
    if (t1.capped)
        res.warnings.push_back("subject level: k_max = " + std::to_string(options.k_max) +
                               " reached at PVE " + std::to_string(t1.achieved_pve));
    if (t2.capped)
        res.warnings.push_back("visit level: k_max = " + std::to_string(options.k_max) +
                               " reached at PVE " + std::to_string(t2.achieved_pve));

    res.phi = dec1.functions.leftCols(res.k1);
    res.psi = dec2.functions.leftCols(res.k2);
    res.lambda1 = dec1.values.head(res.k1);
    res.lambda2 = dec2.values.head(res.k2);
    return res;
}

}  // namespace frim
