#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "frim/inference.hpp"
#include "frim/rng.hpp"
#include "oracles.hpp"

namespace {

frim::CredibleBands flat_band(std::vector<double> grid, double lo, double hi) {
    frim::CredibleBands b;
    b.grid = std::move(grid);
    b.lower.assign(b.grid.size(), lo);
    b.upper.assign(b.grid.size(), hi);
    b.mean.assign(b.grid.size(), 0.5 * (lo + hi));
    return b;
}

}  // namespace

TEST_CASE("pointwise coverage counts closed-interval hits and skips NaN truth") {
    const std::vector<double> grid = {0.0, 0.5, 1.0};
    const std::vector<frim::CredibleBands> bands = {flat_band(grid, 0.0, 1.0),
                                                    flat_band(grid, -1.0, 1.0)};
    Eigen::MatrixXd truth(2, 3);
    truth << 0.5, 1.0, 1.5,   // inside, on the endpoint, outside
             0.0, -1.0, 2.0;  // inside, on the endpoint, outside

    const frim::CoverageReport rep = frim::compute_mpcp(bands, truth);
    CHECK(rep.n_total == 6);
    CHECK(rep.n_covered == 4);
    CHECK(rep.mpcp == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
    CHECK(rep.per_curve[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(rep.per_curve[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    truth(0, 1) = std::numeric_limits<double>::quiet_NaN();
    const frim::CoverageReport skipped = frim::compute_mpcp(bands, truth);
    CHECK(skipped.n_total == 5);
    CHECK(skipped.n_covered == 3);
    CHECK(skipped.per_curve[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("a mask restricts coverage pooling and empty curves report NaN") {
    const std::vector<double> grid = {0.0, 0.5, 1.0};
    const std::vector<frim::CredibleBands> bands = {flat_band(grid, 0.0, 1.0),
                                                    flat_band(grid, 0.0, 1.0)};
    Eigen::MatrixXd truth(2, 3);
    truth << 0.5, 99.0, 99.0,  // only the first column will count
             0.5, 0.5, 0.5;

    const std::vector<std::vector<std::uint8_t>> mask = {{1, 0, 0}, {0, 0, 0}};
    const frim::CoverageReport rep = frim::compute_mpcp(bands, truth, mask);
    CHECK(rep.n_total == 1);
    CHECK(rep.n_covered == 1);
    CHECK(rep.mpcp == 1.0);
    CHECK(rep.per_curve[0] == 1.0);
    CHECK(std::isnan(rep.per_curve[1]));

    // Shape mismatches and an all-masked comparison are errors.
    CHECK_THROWS_AS(frim::compute_mpcp(bands, Eigen::MatrixXd::Zero(3, 3)), frim::InputError);
    CHECK_THROWS_AS(frim::compute_mpcp(bands, Eigen::MatrixXd::Zero(2, 4)), frim::InputError);
    CHECK_THROWS_AS(frim::compute_mpcp(bands, truth, {{1, 0, 0}}), frim::InputError);
    CHECK_THROWS_AS(frim::compute_mpcp(bands, truth, {{1, 0}, {0, 0, 0}}), frim::InputError);
    const std::vector<std::vector<std::uint8_t>> none = {{0, 0, 0}, {0, 0, 0}};
    CHECK_THROWS_WITH_AS(frim::compute_mpcp(bands, truth, none),
                         "coverage: no truth values to compare against", frim::InputError);
}

namespace {

frim::AdjustedComponents balanced_panel(int n_subjects, int visits_per_subject,
                                        std::vector<double> grid) {
    frim::AdjustedComponents ac;
    const int m_bins = static_cast<int>(grid.size());
    ac.grid = std::move(grid);
    ac.n_subjects = static_cast<std::size_t>(n_subjects);
    for (int i = 0; i < n_subjects; ++i) {
        ac.subject_ids.push_back("S" + std::to_string(i));
        for (int j = 0; j < visits_per_subject; ++j) {
            ac.visit_ids.push_back(std::to_string(j));
            ac.visit_subject.push_back(i);
        }
    }
    ac.values = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(n_subjects) * visits_per_subject, m_bins);
    return ac;
}

}  // namespace

TEST_CASE("visit-position deviations project onto the visit basis as expected by hand") {
    frim::AdjustedComponents ac = balanced_panel(2, 2, {0.0, 0.5, 1.0});
    ac.values << 1.0, 1.0, 1.0,   // subject 0, first visit
                 3.0, 3.0, 3.0,   // subject 0, second visit
                 0.0, 0.0, 0.0,   // subject 1, first visit
                 4.0, 4.0, 4.0;   // subject 1, second visit

    // First-visit deviations are (-1) and (-2), averaging to -1.5; with a
    // constant unit psi the projection integrates to the same constant.
    frim::MfpcaResult pca;
    pca.psi = Eigen::MatrixXd::Ones(3, 1);
    const frim::LeakageDiagnostic d = frim::leakage_diagnostic(ac, pca);
    REQUIRE(d.gamma.rows() == 2);
    REQUIRE(d.gamma.cols() == 1);
    CHECK(d.gamma(0, 0) == doctest::Approx(-1.5).epsilon(1e-12));
    CHECK(d.gamma(1, 0) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(d.rms == doctest::Approx(1.5).epsilon(1e-12));

    // Scaling the basis scales the projections linearly.
    frim::MfpcaResult pca2;
    pca2.psi = 2.0 * pca.psi;
    const frim::LeakageDiagnostic d2 = frim::leakage_diagnostic(ac, pca2);
    CHECK(d2.gamma(0, 0) == doctest::Approx(-3.0).epsilon(1e-14));
    CHECK(d2.rms == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("with one visit per subject the deviation is identically zero") {
    frim::AdjustedComponents ac = balanced_panel(5, 1, {0.0, 0.5, 1.0});
    frim::Rng rng(3);
    for (Eigen::Index v = 0; v < ac.values.rows(); ++v)
        for (Eigen::Index m = 0; m < ac.values.cols(); ++m) ac.values(v, m) = rng.normal();
    frim::MfpcaResult pca;
    pca.psi = Eigen::MatrixXd::Ones(3, 2);
    const frim::LeakageDiagnostic d = frim::leakage_diagnostic(ac, pca);
    CHECK(d.gamma.cwiseAbs().maxCoeff() == 0.0);
    CHECK(d.rms == 0.0);
}

TEST_CASE("the finite-sample coupling shrinks like one over root subjects") {
    const int M = 21;
    std::vector<double> grid(M);
    for (int m = 0; m < M; ++m) grid[static_cast<std::size_t>(m)] = m / 20.0;
    Eigen::MatrixXd psi_raw(M, 4);
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < 4; ++k) {
            const double arg = 2.0 * 3.14159265358979323846 * (2 + k / 2) * grid[static_cast<std::size_t>(m)];
            psi_raw(m, k) = std::sqrt(2.0) * (k % 2 == 0 ? std::sin(arg) : std::cos(arg));
        }
    frim::MfpcaResult pca;
    pca.psi = testref::orthonormalize(grid, psi_raw);

    const auto rms_at = [&](int n_subjects, std::uint64_t seed) {
        frim::AdjustedComponents ac = balanced_panel(n_subjects, 3, grid);
        frim::Rng rng(seed);
        for (Eigen::Index v = 0; v < ac.values.rows(); ++v)
            for (Eigen::Index m = 0; m < ac.values.cols(); ++m) ac.values(v, m) = rng.normal();
        return frim::leakage_diagnostic(ac, pca).rms;
    };

    const double small = rms_at(160, 21);
    const double large = rms_at(1600, 22);
    CHECK(small / large == doctest::Approx(std::sqrt(10.0)).epsilon(0.55));
    CHECK(small < 0.2);  // and both are small in absolute terms
}

TEST_CASE("the deviation diagnostic rejects unusable panels") {
    frim::MfpcaResult pca;
    pca.psi = Eigen::MatrixXd::Ones(3, 1);

    frim::AdjustedComponents empty;
    empty.grid = {0.0, 0.5, 1.0};
    CHECK_THROWS_WITH_AS(frim::leakage_diagnostic(empty, pca), "leakage diagnostic: no visits",
                         frim::InputError);

    // Visit counts 1 and 3: the total divides evenly but the split does not.
    frim::AdjustedComponents lopsided = balanced_panel(2, 2, {0.0, 0.5, 1.0});
    lopsided.visit_subject = {0, 1, 1, 1};
    CHECK_THROWS_AS(frim::leakage_diagnostic(lopsided, pca), frim::InputError);

    frim::AdjustedComponents ragged = balanced_panel(2, 2, {0.0, 0.5, 1.0});
    ragged.visit_subject = {0, 0, 0, 1};
    ragged.values.resize(4, 3);
    ragged.values.setZero();
    CHECK_THROWS_AS(frim::leakage_diagnostic(ragged, pca), frim::InputError);

    frim::AdjustedComponents holed = balanced_panel(2, 2, {0.0, 0.5, 1.0});
    holed.values(1, 2) = std::numeric_limits<double>::quiet_NaN();
    try {
        frim::leakage_diagnostic(holed, pca);
        CHECK(false);
    } catch (const frim::InputError& e) {
        CHECK(std::string(e.what()).find("complete adjusted components") != std::string::npos);
    }
}

namespace {

// One subject with a test visit plus three training visits whose pooled draw
// values at every grid point enumerate 1..300, so the inverse-ECDF band at
// alpha = 0.25 (a dyadic rational: the quantile indices are exactly 38 and
// 263) is [38, 263] everywhere.  k2 equals the grid length and psi is the
// identity, so each grid point is driven by its own score column.
frim::PosteriorDraws anomaly_draws(const std::vector<double>& grid,
                                   const std::vector<double>& test_values) {
    const int m = static_cast<int>(grid.size());
    frim::PosteriorDraws d;
    d.family = frim::Family::gaussian;
    d.chains = 1;
    d.draws_per_chain = 100;
    d.n_subjects = 1;
    d.n_visits = 4;
    d.k1 = 1;
    d.k2 = m;
    d.subject_ids = {"S0"};
    d.visit_ids = {"test", "t1", "t2", "t3"};
    d.visit_subject = {0, 0, 0, 0};
    d.grid = grid;
    d.phi_grid = Eigen::MatrixXd::Ones(m, 1);
    d.psi_grid = Eigen::MatrixXd::Identity(m, m);

    d.xi = {Eigen::MatrixXd::Zero(100, 1)};
    Eigen::MatrixXd zeta = Eigen::MatrixXd::Zero(100, 4 * m);
    for (int draw = 0; draw < 100; ++draw)
        for (int l = 0; l < m; ++l) {
            zeta(draw, 0 * m + l) = test_values[static_cast<std::size_t>(l)];
            zeta(draw, 1 * m + l) = 1.0 + draw;    // 1..100
            zeta(draw, 2 * m + l) = 101.0 + draw;  // 101..200
            zeta(draw, 3 * m + l) = 201.0 + draw;  // 201..300
        }
    d.zeta = {std::move(zeta)};
    return d;
}

}  // namespace

TEST_CASE("anomaly flags are strict inverse-ECDF band violations of the test mean") {
    const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    // Band is [38, 263] at every point: on-the-edge values are inside.
    const frim::PosteriorDraws d = anomaly_draws(grid, {38.0, 37.0, 150.0, 263.0, 264.0});

    frim::AnomalyOptions opt;
    opt.alpha = 0.25;
    const frim::AnomalyReport rep = frim::detect_anomalies(d, {{"S0", "test"}}, opt);
    REQUIRE(rep.visits.size() == 1);
    const frim::VisitAnomalyResult& v = rep.visits[0];
    CHECK(v.subject_id == "S0");
    CHECK(v.visit_id == "test");
    CHECK(v.outside == std::vector<std::uint8_t>{0, 1, 0, 0, 1});
    CHECK(v.flagged_fraction == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(rep.mean_flagged_fraction == doctest::Approx(0.4).epsilon(1e-12));
    // Two singleton runs survive a zero duration threshold.
    REQUIRE(v.intervals.size() == 2);
    CHECK(v.intervals[0].start == 0.25);
    CHECK(v.intervals[0].end == 0.25);
    CHECK(v.intervals[1].start == 1.0);
    CHECK(v.intervals[1].end == 1.0);
}

TEST_CASE("flagged runs are reported maximally and filtered by duration") {
    std::vector<double> grid(10);
    for (int l = 0; l < 10; ++l) grid[static_cast<std::size_t>(l)] = 0.125 * l;
    // Outside pattern 0111001101: runs of span 0.25, 0.125, and 0.
    const std::vector<double> test = {150.0, 37.0, 37.0, 37.0, 150.0,
                                      150.0, 37.0, 37.0, 150.0, 37.0};
    const frim::PosteriorDraws d = anomaly_draws(grid, test);

    frim::AnomalyOptions opt;
    opt.alpha = 0.25;
    opt.min_duration = 0.0;
    frim::AnomalyReport rep = frim::detect_anomalies(d, {{"S0", "test"}}, opt);
    CHECK(rep.visits[0].flagged_fraction == doctest::Approx(0.6).epsilon(1e-12));
    REQUIRE(rep.visits[0].intervals.size() == 3);
    CHECK(rep.visits[0].intervals[0].start == 0.125);
    CHECK(rep.visits[0].intervals[0].end == 0.375);
    CHECK(rep.visits[0].intervals[1].start == 0.75);
    CHECK(rep.visits[0].intervals[1].end == 0.875);
    CHECK(rep.visits[0].intervals[2].start == 1.125);

    opt.min_duration = 0.2;
    rep = frim::detect_anomalies(d, {{"S0", "test"}}, opt);
    CHECK(rep.visits[0].flagged_fraction == doctest::Approx(0.6).epsilon(1e-12));
    REQUIRE(rep.visits[0].intervals.size() == 1);
    CHECK(rep.visits[0].intervals[0].start == 0.125);
    CHECK(rep.visits[0].intervals[0].end == 0.375);
}

TEST_CASE("duplicating every chain leaves anomaly flags exactly unchanged") {
    const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    const std::vector<double> test = {38.0, 37.0, 150.0, 263.0, 264.0};
    const frim::PosteriorDraws single = anomaly_draws(grid, test);

    frim::PosteriorDraws doubled = single;
    doubled.chains = 2;
    doubled.xi.push_back(single.xi[0]);
    doubled.zeta.push_back(single.zeta[0]);

    frim::AnomalyOptions opt;
    opt.alpha = 0.25;
    const auto a = frim::detect_anomalies(single, {{"S0", "test"}}, opt);
    const auto b = frim::detect_anomalies(doubled, {{"S0", "test"}}, opt);
    CHECK(a.visits[0].outside == b.visits[0].outside);
    CHECK(a.visits[0].flagged_fraction == b.visits[0].flagged_fraction);
    REQUIRE(a.visits[0].intervals.size() == b.visits[0].intervals.size());
    for (std::size_t t = 0; t < a.visits[0].intervals.size(); ++t) {
        CHECK(a.visits[0].intervals[t].start == b.visits[0].intervals[t].start);
        CHECK(a.visits[0].intervals[t].end == b.visits[0].intervals[t].end);
    }
}

TEST_CASE("an obviously displaced test visit is flagged across the whole domain") {
    const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    const frim::PosteriorDraws d = anomaly_draws(grid, {1e4, 1e4, 1e4, 1e4, 1e4});
    frim::AnomalyOptions opt;
    opt.alpha = 0.05;
    const auto rep = frim::detect_anomalies(d, {{"S0", "test"}}, opt);
    CHECK(rep.visits[0].flagged_fraction == 1.0);
    REQUIRE(rep.visits[0].intervals.size() == 1);
    CHECK(rep.visits[0].intervals[0].start == 0.0);
    CHECK(rep.visits[0].intervals[0].end == 1.0);
}

TEST_CASE("anomaly detection validates its addressing and inputs") {
    const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    const frim::PosteriorDraws d = anomaly_draws(grid, {150.0, 150.0, 150.0, 150.0, 150.0});
    frim::AnomalyOptions opt;
    opt.alpha = 0.25;

    CHECK_THROWS_WITH_AS(frim::detect_anomalies(d, {{"nope", "test"}}, opt),
                         "unknown subject 'nope'", frim::InputError);
    CHECK_THROWS_WITH_AS(frim::detect_anomalies(d, {{"S0", "nope"}}, opt),
                         "unknown visit 'nope' for subject 'S0'", frim::InputError);

    frim::AnomalyOptions bad = opt;
    bad.alpha = 0.0;
    CHECK_THROWS_AS(frim::detect_anomalies(d, {{"S0", "test"}}, bad), frim::InputError);
    bad.alpha = 1.0;
    CHECK_THROWS_AS(frim::detect_anomalies(d, {{"S0", "test"}}, bad), frim::InputError);

    CHECK_THROWS_WITH_AS(frim::detect_anomalies(frim::PosteriorDraws(), {{"S0", "test"}}, opt),
                         "anomaly detection: no posterior draws", frim::InputError);

    // A subject whose test visit leaves fewer than two training visits.
    frim::PosteriorDraws thin = d;
    thin.n_visits = 2;
    thin.visit_ids = {"test", "t1"};
    thin.visit_subject = {0, 0};
    try {
        frim::detect_anomalies(thin, {{"S0", "test"}}, opt);
        CHECK(false);
    } catch (const frim::InputError& e) {
        CHECK(std::string(e.what()).find("at least two other visits") != std::string::npos);
    }
}
