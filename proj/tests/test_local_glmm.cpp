#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "frim/core_data.hpp"
#include "frim/local_glmm.hpp"
#include "frim/rng.hpp"
#include "oracles.hpp"

using frim::Family;
using frim::FunctionalDataset;
using frim::GlmmControls;
using frim::InputError;

namespace {

// Builds an in-memory dataset whose records all sit at s = 0.5, so a single
// bin over [0, 1] captures everything and the local fit sees the whole data.
struct Design {
    FunctionalDataset data;
    Eigen::MatrixXd x_rec;   // record-level fixed-effect rows
    Eigen::MatrixXd za, zb;  // record-level indicator matrices
    Eigen::VectorXd y;
};

Design build_design(int n_subjects, const std::vector<int>& visits_per_subject,
                    const std::vector<int>& records_per_visit, int p, Family family,
                    const std::vector<double>& y) {
    Design d;
    d.data.family = family;
    int visit_idx = 0;
    std::size_t rec = 0;
    frim::Rng xgen(1234);
    std::vector<Eigen::RowVectorXd> xrows;
    for (int i = 0; i < n_subjects; ++i) {
        d.data.subject_ids.push_back("S" + std::to_string(i));
        for (int j = 0; j < visits_per_subject[static_cast<std::size_t>(i)]; ++j) {
            d.data.visit_ids.push_back(std::to_string(j));
            d.data.visit_subject.push_back(i);
            Eigen::RowVectorXd x(p);
            x(0) = 1.0;
            for (int k = 1; k < p; ++k) x(k) = xgen.normal();
            xrows.push_back(x);
            for (int r = 0; r < records_per_visit[static_cast<std::size_t>(visit_idx)]; ++r) {
                d.data.rec_visit.push_back(static_cast<std::uint32_t>(visit_idx));
                d.data.rec_s.push_back(0.5);
                d.data.rec_y.push_back(y[rec++]);
            }
            ++visit_idx;
        }
    }
    REQUIRE(rec == y.size());
    d.data.covariate_names.assign(static_cast<std::size_t>(p), "");
    d.data.covariate_names[0] = "(intercept)";
    for (int k = 1; k < p; ++k) d.data.covariate_names[static_cast<std::size_t>(k)] = "x" + std::to_string(k);
    d.data.X.resize(static_cast<Eigen::Index>(xrows.size()), p);
    for (std::size_t v = 0; v < xrows.size(); ++v) d.data.X.row(static_cast<Eigen::Index>(v)) = xrows[v];
    d.data.finalize();

    const Eigen::Index n = static_cast<Eigen::Index>(d.data.n_records());
    d.x_rec.resize(n, p);
    d.za = Eigen::MatrixXd::Zero(n, n_subjects);
    d.zb = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(d.data.n_visits()));
    d.y.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto v = d.data.rec_visit[static_cast<std::size_t>(r)];
        d.x_rec.row(r) = d.data.X.row(static_cast<Eigen::Index>(v));
        d.za(r, d.data.visit_subject[v]) = 1.0;
        d.zb(r, static_cast<Eigen::Index>(v)) = 1.0;
        d.y(r) = d.data.rec_y[static_cast<std::size_t>(r)];
    }
    return d;
}

frim::BinnedDataset one_bin(const FunctionalDataset& data) {
    return frim::assign_bins(data, frim::make_bins(0.0, 1.0, frim::BinSpec::count(1)));
}

}  // namespace

TEST_CASE("balanced nested design reproduces the closed-form variance analysis") {
    // With a balanced layout (I subjects x J visits x n records) the REML
    // estimates coincide with the method-of-moments decomposition as long as
    // every component estimate stays positive.
    const int I = 8, J = 4, n = 6;
    frim::Rng rng(2718);
    const double sa = 2.0, sb = std::sqrt(2.0), se = 1.0, beta0 = 3.0;
    std::vector<double> y;
    for (int i = 0; i < I; ++i) {
        const double a = sa * rng.normal();
        for (int j = 0; j < J; ++j) {
            const double b = sb * rng.normal();
            for (int r = 0; r < n; ++r) y.push_back(beta0 + a + b + se * rng.normal());
        }
    }
    const Design d = build_design(I, std::vector<int>(I, J), std::vector<int>(I * J, n),
                                  1, Family::gaussian, y);
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0);
    REQUIRE(fit.converged);

    // Method-of-moments pieces.
    double grand = 0.0;
    for (double v : y) grand += v;
    grand /= static_cast<double>(y.size());
    std::vector<double> cell_mean(static_cast<std::size_t>(I * J), 0.0);
    for (std::size_t r = 0; r < y.size(); ++r)
        cell_mean[r / static_cast<std::size_t>(n)] += y[r] / n;
    std::vector<double> subj_mean(static_cast<std::size_t>(I), 0.0);
    for (int i = 0; i < I; ++i)
        for (int j = 0; j < J; ++j)
            subj_mean[static_cast<std::size_t>(i)] += cell_mean[static_cast<std::size_t>(i * J + j)] / J;
    double ss_subj = 0.0, ss_visit = 0.0, ss_err = 0.0;
    for (int i = 0; i < I; ++i) {
        ss_subj += (subj_mean[static_cast<std::size_t>(i)] - grand) *
                   (subj_mean[static_cast<std::size_t>(i)] - grand);
        for (int j = 0; j < J; ++j) {
            const double cm = cell_mean[static_cast<std::size_t>(i * J + j)];
            ss_visit += (cm - subj_mean[static_cast<std::size_t>(i)]) *
                        (cm - subj_mean[static_cast<std::size_t>(i)]);
            for (int r = 0; r < n; ++r)
                ss_err += (y[static_cast<std::size_t>((i * J + j) * n + r)] - cm) *
                          (y[static_cast<std::size_t>((i * J + j) * n + r)] - cm);
        }
    }
    const double mse = ss_err / (I * J * (n - 1));
    const double msb = static_cast<double>(n) * ss_visit / (I * (J - 1));
    const double msa = static_cast<double>(J * n) * ss_subj / (I - 1);
    const double want_var_visit = (msb - mse) / n;
    const double want_var_subject = (msa - msb) / (J * n);
    REQUIRE(want_var_visit > 0.0);
    REQUIRE(want_var_subject > 0.0);

    CHECK(fit.beta[0] == doctest::Approx(grand).epsilon(1e-8));
    CHECK(fit.var_residual == doctest::Approx(mse).epsilon(1e-4));
    CHECK(fit.var_visit == doctest::Approx(want_var_visit).epsilon(1e-3));
    CHECK(fit.var_subject == doctest::Approx(want_var_subject).epsilon(1e-3));
}

TEST_CASE("fixed-ratio fits agree with the dense mixed-model equations") {
    frim::Rng rng(555);
    for (int rep = 0; rep < 30; ++rep) {
        const int I = 2 + static_cast<int>(rng.uniform_int(3));
        std::vector<int> visits(static_cast<std::size_t>(I));
        int n_visits = 0;
        for (int& v : visits) {
            v = 1 + static_cast<int>(rng.uniform_int(3));
            n_visits += v;
        }
        std::vector<int> recs(static_cast<std::size_t>(n_visits));
        int n_rec = 0;
        for (int& r : recs) {
            r = 1 + static_cast<int>(rng.uniform_int(5));
            n_rec += r;
        }
        const int p = 1 + static_cast<int>(rng.uniform_int(2));
        if (n_rec <= p) continue;
        std::vector<double> y(static_cast<std::size_t>(n_rec));
        for (double& v : y) v = rng.normal() * 2.0 + 1.0;

        const Design d = build_design(I, visits, recs, p, Family::gaussian, y);
        GlmmControls ctl;
        ctl.fixed_variances = true;
        ctl.fixed_var_subject = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
        ctl.fixed_var_visit = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
        const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0, ctl);
        REQUIRE(fit.converged);

        const auto want = testref::henderson_solve(d.x_rec, d.za, d.zb, d.y,
                                                   ctl.fixed_var_subject, ctl.fixed_var_visit);
        INFO("rep ", rep, ": I=", I, " visits=", n_visits, " records=", n_rec, " p=", p);
        for (int k = 0; k < p; ++k)
            CHECK(fit.beta[k] == doctest::Approx(want.beta[k]).epsilon(1e-6));
        for (int i = 0; i < I; ++i)
            CHECK(fit.a_hat[static_cast<std::size_t>(i)] ==
                  doctest::Approx(want.a[i]).epsilon(1e-6).scale(1.0));
        for (int v = 0; v < n_visits; ++v) {
            CHECK(fit.b_hat[static_cast<std::size_t>(v)] ==
                  doctest::Approx(want.b[v]).epsilon(1e-6).scale(1.0));
            const double eta_want = d.data.X.row(v).dot(want.beta) +
                                    want.a[d.data.visit_subject[static_cast<std::size_t>(v)]] +
                                    want.b[v];
            CHECK(fit.eta_hat[static_cast<std::size_t>(v)] ==
                  doctest::Approx(eta_want).epsilon(1e-6).scale(1.0));
        }
        CHECK(fit.var_residual == doctest::Approx(want.sigma2).epsilon(1e-6));
    }
}

TEST_CASE("the reported objective equals the dense REML deviance") {
    frim::Rng rng(808);
    const int I = 6, J = 3, n = 4;
    std::vector<double> y;
    for (int i = 0; i < I; ++i) {
        const double a = rng.normal();
        for (int j = 0; j < J; ++j) {
            const double b = 0.7 * rng.normal();
            for (int r = 0; r < n; ++r) y.push_back(0.5 + a + b + rng.normal());
        }
    }
    const Design d = build_design(I, std::vector<int>(I, J), std::vector<int>(I * J, n),
                                  2, Family::gaussian, y);
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0);
    REQUIRE(fit.converged);
    const double gamma_a = fit.var_subject / fit.var_residual;
    const double gamma_b = fit.var_visit / fit.var_residual;
    const double dense =
        testref::dense_reml_deviance(d.x_rec, d.za, d.zb, d.y, gamma_a, gamma_b);
    CHECK(fit.objective_trace.back() == doctest::Approx(dense).epsilon(1e-8));
}

TEST_CASE("the free fit sits at a local minimum of the dense deviance") {
    frim::Rng rng(909);
    const int I = 7, J = 3, n = 5;
    std::vector<double> y;
    for (int i = 0; i < I; ++i) {
        const double a = 1.3 * rng.normal();
        for (int j = 0; j < J; ++j) {
            const double b = 0.8 * rng.normal();
            for (int r = 0; r < n; ++r) y.push_back(1.0 + a + b + rng.normal());
        }
    }
    const Design d = build_design(I, std::vector<int>(I, J), std::vector<int>(I * J, n),
                                  1, Family::gaussian, y);
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0);
    REQUIRE(fit.converged);
    const double ga = fit.var_subject / fit.var_residual;
    const double gb = fit.var_visit / fit.var_residual;
    const double at_fit = testref::dense_reml_deviance(d.x_rec, d.za, d.zb, d.y, ga, gb);
    for (double fa : {0.8, 0.95, 1.05, 1.25}) {
        for (double fb : {0.8, 0.95, 1.05, 1.25}) {
            if (fa == 1.0 && fb == 1.0) continue;
            const double nearby =
                testref::dense_reml_deviance(d.x_rec, d.za, d.zb, d.y, ga * fa, gb * fb);
            CHECK(at_fit <= nearby + 1e-5);
        }
    }
}

TEST_CASE("shrinkage limits: tiny ratios give OLS, huge ratios track cell means") {
    frim::Rng rng(321);
    const int I = 4, J = 2, n = 6;
    std::vector<double> y;
    for (std::size_t r = 0; r < static_cast<std::size_t>(I * J * n); ++r)
        y.push_back(rng.normal() + 2.0);
    const Design d = build_design(I, std::vector<int>(I, J), std::vector<int>(I * J, n),
                                  1, Family::gaussian, y);

    GlmmControls tiny;
    tiny.fixed_variances = true;
    tiny.fixed_var_subject = 1e-8;
    tiny.fixed_var_visit = 1e-8;
    const auto fit0 = frim::fit_local_glmm(d.data, one_bin(d.data), 0, tiny);
    double grand = 0.0;
    for (double v : y) grand += v;
    grand /= static_cast<double>(y.size());
    CHECK(fit0.beta[0] == doctest::Approx(grand).epsilon(1e-9));
    for (double a : fit0.a_hat) CHECK(std::abs(a) < 1e-6);
    for (double b : fit0.b_hat) CHECK(std::abs(b) < 1e-6);

    GlmmControls huge;
    huge.fixed_variances = true;
    huge.fixed_var_subject = 1e6;
    huge.fixed_var_visit = 1e6;
    const auto fit1 = frim::fit_local_glmm(d.data, one_bin(d.data), 0, huge);
    for (int v = 0; v < I * J; ++v) {
        double cell = 0.0;
        for (int r = 0; r < n; ++r) cell += y[static_cast<std::size_t>(v * n + r)] / n;
        CHECK(fit1.eta_hat[static_cast<std::size_t>(v)] == doctest::Approx(cell).epsilon(1e-4));
    }
}

TEST_CASE("visits and subjects outside the bin are marked absent") {
    // Two bins; subject B only has records in the right bin.
    std::vector<double> y{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
    Design d = build_design(2, {2, 2}, {2, 2, 2, 2}, 1, Family::gaussian, y);
    // Move subject B's records (visits 2, 3) to s = 0.8; keep A at 0.2.
    for (std::size_t r = 0; r < d.data.n_records(); ++r)
        d.data.rec_s[r] = d.data.rec_visit[r] < 2 ? 0.2 : 0.8;
    d.data.finalize();
    const auto binned = frim::assign_bins(d.data, frim::make_bins(0.0, 1.0, frim::BinSpec::count(2)));
    const auto fit = frim::fit_local_glmm(d.data, binned, 0);
    CHECK(fit.subject_in_bin == std::vector<char>{1, 0});
    CHECK(fit.visit_in_bin == std::vector<char>{1, 1, 0, 0});
    CHECK(std::isnan(fit.eta_hat[2]));
    CHECK(std::isnan(fit.eta_hat[3]));
    CHECK(fit.a_hat[1] == 0.0);
    CHECK(std::isfinite(fit.eta_hat[0]));
}

TEST_CASE("a variance component that is truly zero lands on the boundary with a warning") {
    frim::Rng rng(246);
    const int I = 6, J = 3, n = 5;
    std::vector<double> y;
    for (int i = 0; i < I; ++i) {
        std::vector<double> yi;
        for (int j = 0; j < J; ++j) {
            const double b = 0.9 * rng.normal();
            for (int r = 0; r < n; ++r) yi.push_back(b + rng.normal());
        }
        // Center each subject: the between-subject variance is exactly zero,
        // so the estimate must pin to the lower search bound.
        double m = 0.0;
        for (double v : yi) m += v / static_cast<double>(yi.size());
        for (double v : yi) y.push_back(v - m);
    }
    const Design d = build_design(I, std::vector<int>(I, J), std::vector<int>(I * J, n),
                                  1, Family::gaussian, y);

    // Default tolerances stop on negligible objective change while the ratio is
    // already tiny; tight tolerances must carry the descent all the way to the
    // search bound and raise the boundary warning.
    frim::GlmmControls tight;
    tight.rel_tol = 1e-14;
    tight.grad_tol = 1e-10;
    tight.max_outer = 2000;
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0, tight);
    CHECK(fit.var_subject < 1e-4);
    CHECK(fit.var_subject / fit.var_residual == doctest::Approx(1e-8).epsilon(1e-6));
    bool warned = false;
    for (const auto& w : fit.warnings)
        if (w.find("search boundary") != std::string::npos) warned = true;
    CHECK(warned);

    const auto loose = frim::fit_local_glmm(d.data, one_bin(d.data), 0);
    CHECK(loose.var_subject < 1e-4);
}

TEST_CASE("identical inputs give bitwise identical fits") {
    frim::Rng rng(135);
    std::vector<double> y(60);
    for (double& v : y) v = rng.normal();
    const Design d = build_design(5, {2, 3, 1, 2, 2}, std::vector<int>(10, 6), 2,
                                  Family::gaussian, y);
    const auto binned = one_bin(d.data);
    const auto f1 = frim::fit_local_glmm(d.data, binned, 0);
    const auto f2 = frim::fit_local_glmm(d.data, binned, 0);
    CHECK(f1.beta == f2.beta);
    CHECK(f1.a_hat == f2.a_hat);
    CHECK(f1.b_hat == f2.b_hat);
    CHECK(f1.var_subject == f2.var_subject);
    CHECK(f1.objective_trace == f2.objective_trace);
}

TEST_CASE("the accepted objective trace never increases") {
    frim::Rng rng(777);
    std::vector<double> y(90);
    for (double& v : y) v = rng.normal() * 1.5;
    const Design d = build_design(6, std::vector<int>(6, 3), std::vector<int>(18, 5), 1,
                                  Family::gaussian, y);
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0);
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
        CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-9);
}

TEST_CASE("binomial joint mode matches the dense penalized Newton solver") {
    frim::Rng rng(678);
    for (int rep = 0; rep < 20; ++rep) {
        const int I = 2 + static_cast<int>(rng.uniform_int(3));
        std::vector<int> visits(static_cast<std::size_t>(I));
        int n_visits = 0;
        for (int& v : visits) {
            v = 1 + static_cast<int>(rng.uniform_int(3));
            n_visits += v;
        }
        std::vector<int> recs(static_cast<std::size_t>(n_visits));
        int n_rec = 0;
        for (int& r : recs) {
            r = 2 + static_cast<int>(rng.uniform_int(6));
            n_rec += r;
        }
        std::vector<double> y(static_cast<std::size_t>(n_rec));
        double total = 0.0;
        for (double& v : y) {
            v = rng.uniform() < 0.4 ? 1.0 : 0.0;
            total += v;
        }
        if (total == 0.0 || total == static_cast<double>(n_rec)) continue;

        const int p = 1 + static_cast<int>(rng.uniform_int(2));
        if (n_rec <= p) continue;
        const Design d = build_design(I, visits, recs, p, Family::binomial, y);
        GlmmControls ctl;
        ctl.fixed_variances = true;
        ctl.fixed_var_subject = std::exp(rng.uniform(std::log(0.25), std::log(4.0)));
        ctl.fixed_var_visit = std::exp(rng.uniform(std::log(0.25), std::log(4.0)));
        const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0, ctl);
        REQUIRE(fit.converged);

        const auto want = testref::binomial_joint_mode(d.x_rec, d.za, d.zb, d.y,
                                                       ctl.fixed_var_subject,
                                                       ctl.fixed_var_visit);
        INFO("rep ", rep);
        for (int k = 0; k < p; ++k)
            CHECK(fit.beta[k] == doctest::Approx(want.beta[k]).epsilon(1e-5).scale(1.0));
        for (int i = 0; i < I; ++i)
            CHECK(fit.a_hat[static_cast<std::size_t>(i)] ==
                  doctest::Approx(want.a[i]).epsilon(1e-5).scale(1.0));
        for (int v = 0; v < n_visits; ++v)
            CHECK(fit.b_hat[static_cast<std::size_t>(v)] ==
                  doctest::Approx(want.b[v]).epsilon(1e-5).scale(1.0));
    }
}

TEST_CASE("with negligible random effects the binomial fit is plain logistic regression") {
    frim::Rng rng(912);
    const int n_rec = 80;
    std::vector<double> y(n_rec);
    for (double& v : y) v = rng.uniform() < 0.35 ? 1.0 : 0.0;
    const Design d = build_design(2, {2, 2}, std::vector<int>(4, 20), 2, Family::binomial, y);
    GlmmControls ctl;
    ctl.fixed_variances = true;
    ctl.fixed_var_subject = 1e-8;
    ctl.fixed_var_visit = 1e-8;
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0, ctl);
    REQUIRE(fit.converged);

    // Unpenalized logistic MLE by Newton iteration.
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(2);
    for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd eta = d.x_rec * beta;
        const Eigen::VectorXd mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
        const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
        const Eigen::VectorXd step = (d.x_rec.transpose() * w.asDiagonal() * d.x_rec)
                                         .ldlt()
                                         .solve(d.x_rec.transpose() * (d.y - mu));
        beta += step;
        if (step.lpNorm<Eigen::Infinity>() < 1e-13) break;
    }
    CHECK(fit.beta[0] == doctest::Approx(beta[0]).epsilon(1e-4));
    CHECK(fit.beta[1] == doctest::Approx(beta[1]).epsilon(1e-4));
    for (double a : fit.a_hat) CHECK(std::abs(a) < 1e-6);
}

TEST_CASE("free binomial fit recovers simulation parameters to useful accuracy") {
    frim::Rng rng(100);
    const int I = 30, J = 4, n = 25;
    const double beta0 = 0.4, sa = 1.0, sb = 0.5;
    std::vector<double> y;
    for (int i = 0; i < I; ++i) {
        const double a = sa * rng.normal();
        for (int j = 0; j < J; ++j) {
            const double b = sb * rng.normal();
            const double pr = 1.0 / (1.0 + std::exp(-(beta0 + a + b)));
            for (int r = 0; r < n; ++r) y.push_back(rng.uniform() < pr ? 1.0 : 0.0);
        }
    }
    const Design d = build_design(I, std::vector<int>(I, J), std::vector<int>(I * J, n),
                                  1, Family::binomial, y);
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0);
    REQUIRE(fit.converged);
    CHECK(std::isnan(fit.var_residual));  // no residual variance for binomial
    CHECK(fit.beta[0] > 0.0);
    CHECK(fit.beta[0] < 0.9);
    CHECK(fit.var_subject > 0.3);
    CHECK(fit.var_subject < 3.0);
    CHECK(fit.var_visit < 1.5);
}

TEST_CASE("complete separation in a bin is skipped with a warning") {
    std::vector<double> y(24, 1.0);  // every outcome is a success
    const Design d = build_design(3, {2, 2, 2}, std::vector<int>(6, 4), 1,
                                  Family::binomial, y);
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0);
    CHECK_FALSE(fit.converged);
    REQUIRE_FALSE(fit.warnings.empty());
    CHECK(fit.warnings[0].find("separation") != std::string::npos);
    CHECK(std::isnan(fit.beta[0]));
}

TEST_CASE("a collinear covariate is reported by name") {
    frim::Rng rng(17);
    std::vector<double> y(40);
    for (double& v : y) v = rng.normal();
    Design d = build_design(4, {2, 2, 3, 3}, std::vector<int>(10, 4), 3,
                            Family::gaussian, y);
    // x2 is half of x1: the pivoted QR keeps the larger column and flags x2.
    d.data.X.col(2) = 0.5 * d.data.X.col(1);
    d.data.finalize();
    CHECK_THROWS_WITH_AS((void)frim::fit_local_glmm(d.data, one_bin(d.data), 0),
                         doctest::Contains("'x2'"), InputError);
}

TEST_CASE("too few records for the fixed effects is a soft failure") {
    const std::vector<double> y{1.0, 2.0};
    const Design d = build_design(1, {2}, {1, 1}, 2, Family::gaussian, y);
    const auto fit = frim::fit_local_glmm(d.data, one_bin(d.data), 0);
    CHECK_FALSE(fit.converged);
    REQUIRE_FALSE(fit.warnings.empty());
    CHECK(fit.warnings[0].find("fewer records than fixed-effect coefficients") !=
          std::string::npos);
}

TEST_CASE("bin index is validated") {
    const std::vector<double> y{1.0, 2.0, 3.0};
    const Design d = build_design(1, {1}, {3}, 1, Family::gaussian, y);
    CHECK_THROWS_AS((void)frim::fit_local_glmm(d.data, one_bin(d.data), 5), InputError);
}
