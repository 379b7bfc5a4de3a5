#include "frim/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "frim/common.hpp"
#include "frim/stats.hpp"

namespace frim {

CoverageReport compute_mpcp(const std::vector<CredibleBands>& bands, const Eigen::MatrixXd& truth,
                            const std::vector<std::vector<std::uint8_t>>& mask) {
    if (static_cast<std::size_t>(truth.rows()) != bands.size())
        throw InputError("coverage: truth has " + std::to_string(truth.rows()) +
                         " rows but there are " + std::to_string(bands.size()) + " bands");
    if (!mask.empty() && mask.size() != bands.size())
        throw InputError("coverage: mask size does not match the number of bands");

    CoverageReport report;
    report.per_curve.assign(bands.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t e = 0; e < bands.size(); ++e) {
        const CredibleBands& band = bands[e];
        if (static_cast<Eigen::Index>(band.grid.size()) != truth.cols())
            throw InputError("coverage: band grid length does not match truth columns");
        if (!mask.empty() && mask[e].size() != band.grid.size())
            throw InputError("coverage: mask row length does not match the band grid");

        std::size_t covered = 0, total = 0;
        for (std::size_t l = 0; l < band.grid.size(); ++l) {
            const double t = truth(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(l));
            if (std::isnan(t)) continue;
            if (!mask.empty() && mask[e][l] == 0) continue;
            ++total;
            if (band.lower[l] <= t && t <= band.upper[l]) ++covered;
        }
        report.n_covered += covered;
        report.n_total += total;
        if (total > 0) report.per_curve[e] = static_cast<double>(covered) / static_cast<double>(total);
    }
    if (report.n_total == 0) throw InputError("coverage: no truth values to compare against");
    report.mpcp = static_cast<double>(report.n_covered) / static_cast<double>(report.n_total);
    return report;
}

LeakageDiagnostic leakage_diagnostic(const AdjustedComponents& ac, const MfpcaResult& pca) {
    const std::size_t n_visits = static_cast<std::size_t>(ac.values.rows());
    const std::size_t n_grid = ac.grid.size();
    const std::size_t n_subjects = ac.n_subjects;
    if (n_subjects == 0 || n_visits == 0)
        throw InputError("leakage diagnostic: no visits");
    if (n_visits % n_subjects != 0)
        throw InputError("leakage diagnostic: requires a balanced design "
                         "(every subject with the same number of visits)");
    const std::size_t per_subject = n_visits / n_subjects;

    // Visit position = order of appearance within each subject.
    std::vector<std::size_t> position(n_visits);
    std::vector<std::size_t> seen(n_subjects, 0);
    for (std::size_t v = 0; v < n_visits; ++v) {
        const int i = ac.visit_subject[v];
        position[v] = seen[static_cast<std::size_t>(i)]++;
    }
    for (std::size_t i = 0; i < n_subjects; ++i)
        if (seen[i] != per_subject)
            throw InputError("leakage diagnostic: requires a balanced design "
                             "(every subject with the same number of visits)");
    if (!ac.values.allFinite())
        throw InputError("leakage diagnostic: requires complete adjusted components "
                         "(no failed bins, no missing visits)");

    // delta_j(s) = average over subjects of the visit-position deviation from
    // the subject's own mean curve.
    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(per_subject),
                                                  static_cast<Eigen::Index>(n_grid));
    std::vector<Eigen::RowVectorXd> subject_mean(
        n_subjects, Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(n_grid)));
    for (std::size_t v = 0; v < n_visits; ++v)
        subject_mean[static_cast<std::size_t>(ac.visit_subject[v])] += ac.values.row(static_cast<Eigen::Index>(v));
    for (auto& row : subject_mean) row /= static_cast<double>(per_subject);
    for (std::size_t v = 0; v < n_visits; ++v) {
        const std::size_t i = static_cast<std::size_t>(ac.visit_subject[v]);
        delta.row(static_cast<Eigen::Index>(position[v])) +=
            ac.values.row(static_cast<Eigen::Index>(v)) - subject_mean[i];
    }
    delta /= static_cast<double>(n_subjects);

    const std::vector<double> w = trapezoid_weights(ac.grid);
    Eigen::VectorXd wv(static_cast<Eigen::Index>(n_grid));
    for (std::size_t m = 0; m < n_grid; ++m) wv[static_cast<Eigen::Index>(m)] = w[m];

    LeakageDiagnostic out;
    out.gamma = delta * wv.asDiagonal() * pca.psi;  // per-position projection on each psi_k
    out.rms = std::sqrt(out.gamma.array().square().mean());
    return out;
}

namespace {

// Index of a subject label, or an error naming it.
std::size_t find_subject(const PosteriorDraws& draws, const std::string& subject_id) {
    for (std::size_t i = 0; i < draws.subject_ids.size(); ++i)
        if (draws.subject_ids[i] == subject_id) return i;
    throw InputError("unknown subject '" + subject_id + "'");
}

std::size_t find_visit(const PosteriorDraws& draws, std::size_t subject, const std::string& visit_id) {
    for (std::size_t v = 0; v < draws.visit_ids.size(); ++v)
        if (static_cast<std::size_t>(draws.visit_subject[v]) == subject && draws.visit_ids[v] == visit_id)
            return v;
    throw InputError("unknown visit '" + visit_id + "' for subject '" +
                     draws.subject_ids[subject] + "'");
}

}  // namespace

namespace {

// Inverse-ECDF quantile: the smallest order statistic whose ECDF reaches p.
// Unlike interpolating quantiles this is exactly invariant to duplicating the
// sample, which keeps anomaly flags stable when draws are pooled repeatedly.
double ecdf_quantile_inplace(std::vector<double>& x, double p) {
    const std::size_t n = x.size();
    std::size_t k = p <= 0.0 ? 1 : static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    if (k < 1) k = 1;
    if (k > n) k = n;
    std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k - 1), x.end());
    return x[k - 1];
}

}  // namespace

AnomalyReport detect_anomalies(const PosteriorDraws& draws,
                               const std::vector<std::pair<std::string, std::string>>& test_visits,
                               const AnomalyOptions& options) {
    if (!(options.alpha > 0.0 && options.alpha < 1.0))
        throw InputError("anomaly detection: alpha must be in (0, 1)");
    const std::size_t n_grid = draws.grid.size();
    const std::size_t total = draws.total_draws();
    if (total == 0) throw InputError("anomaly detection: no posterior draws");

    AnomalyReport report;
    report.visits.reserve(test_visits.size());
    std::vector<double> column(1);

    for (const auto& [subject_id, visit_id] : test_visits) {
        const std::size_t i = find_subject(draws, subject_id);
        const std::size_t vt = find_visit(draws, i, visit_id);

        std::vector<std::size_t> train;
        for (std::size_t v = 0; v < draws.visit_ids.size(); ++v)
            if (static_cast<std::size_t>(draws.visit_subject[v]) == i && v != vt) train.push_back(v);
        if (train.size() < 2)
            throw InputError("anomaly detection: subject '" + subject_id +
                             "' needs at least two other visits to train on");

        // The subject-level deviation is shared between test and training
        // visits, so the comparison happens on the visit-level curves alone:
        // pool the per-draw curves of every training visit as the reference,
        // and score the test visit by its posterior-mean curve.
        const std::size_t n_pool = total * train.size();
        Eigen::MatrixXd pooled(static_cast<Eigen::Index>(n_pool), static_cast<Eigen::Index>(n_grid));
        Eigen::RowVectorXd test_mean = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(n_grid));
        std::size_t row = 0;
        for (int c = 0; c < draws.chains; ++c) {
            const Eigen::MatrixXd& zeta = draws.zeta[static_cast<std::size_t>(c)];
            for (std::size_t d = 0; d < draws.draws_per_chain; ++d) {
                const Eigen::Index di = static_cast<Eigen::Index>(d);
                for (const std::size_t v : train) {
                    pooled.row(static_cast<Eigen::Index>(row++)) =
                        zeta.block(di, static_cast<Eigen::Index>(v) * draws.k2, 1, draws.k2) *
                        draws.psi_grid.transpose();
                }
                test_mean += zeta.block(di, static_cast<Eigen::Index>(vt) * draws.k2, 1, draws.k2) *
                             draws.psi_grid.transpose();
            }
        }
        test_mean /= static_cast<double>(total);

        VisitAnomalyResult result;
        result.subject_id = subject_id;
        result.visit_id = visit_id;
        result.outside.assign(n_grid, 0);
        std::size_t n_out = 0;
        column.resize(n_pool);
        for (std::size_t l = 0; l < n_grid; ++l) {
            const Eigen::Index li = static_cast<Eigen::Index>(l);
            Eigen::VectorXd::Map(column.data(), static_cast<Eigen::Index>(n_pool)) = pooled.col(li);
            const double lo = ecdf_quantile_inplace(column, options.alpha / 2.0);
            const double hi = ecdf_quantile_inplace(column, 1.0 - options.alpha / 2.0);
            if (test_mean[li] < lo || test_mean[li] > hi) {
                result.outside[l] = 1;
                ++n_out;
            }
        }
        result.flagged_fraction = static_cast<double>(n_out) / static_cast<double>(n_grid);

        // Maximal flagged runs, reported as [start, end] in grid units and
        // filtered by the duration threshold.
        std::size_t l = 0;
        while (l < n_grid) {
            if (!result.outside[l]) {
                ++l;
                continue;
            }
            std::size_t r = l;
            while (r + 1 < n_grid && result.outside[r + 1]) ++r;
            if (draws.grid[r] - draws.grid[l] >= options.min_duration)
                result.intervals.push_back({draws.grid[l], draws.grid[r]});
            l = r + 1;
        }
        report.mean_flagged_fraction += result.flagged_fraction;
        report.visits.push_back(std::move(result));
    }
    if (!report.visits.empty())
        report.mean_flagged_fraction /= static_cast<double>(report.visits.size());
    return report;
}

}  // namespace frim
