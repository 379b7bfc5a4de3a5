#include "frim/local_glmm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>

#include "frim/common.hpp"
#include "frim/stats.hpp"

namespace frim {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Per-(subject, visit) sufficient statistics for one bin.  The covariates
// are visit-level and the random effects are intercepts, so {count, sum,
// sum of squares} per visit carries all the information the likelihood
// needs; every evaluation below is O(#cells) instead of O(#records).
struct Cells {
    std::vector<int> visit;    // dataset visit index, sorted by (subject, visit)
    std::vector<double> n;     // record count
    std::vector<double> sum;   // sum of outcomes
    std::vector<double> sum2;  // sum of squared outcomes
    Eigen::MatrixXd x;         // cell-level covariate rows

    std::vector<int> subject;      // per group: dataset subject index
    std::vector<int> group_begin;  // group g spans cells [group_begin[g], group_begin[g+1])
    double n_total = 0.0;

    std::size_t n_cells() const { return visit.size(); }
    std::size_t n_groups() const { return subject.size(); }
};

Cells collect_cells(const FunctionalDataset& d, const BinnedDataset& binned,
                    std::size_t bin_index) {
    const auto& records = binned.bin_records.at(bin_index);
    std::vector<std::ptrdiff_t> cell_of_visit(d.n_visits(), -1);

    Cells c;
    std::vector<double> n, sum, sum2;
    std::vector<int> visit;
    for (const std::uint32_t r : records) {
        const std::uint32_t v = d.rec_visit[r];
        std::ptrdiff_t idx = cell_of_visit[v];
        if (idx < 0) {
            idx = static_cast<std::ptrdiff_t>(visit.size());
            cell_of_visit[v] = idx;
            visit.push_back(static_cast<int>(v));
            n.push_back(0.0);
            sum.push_back(0.0);
            sum2.push_back(0.0);
        }
        n[static_cast<std::size_t>(idx)] += 1.0;
        sum[static_cast<std::size_t>(idx)] += d.rec_y[r];
        sum2[static_cast<std::size_t>(idx)] += d.rec_y[r] * d.rec_y[r];
    }

    // Order cells by (subject, visit) so each subject's cells are contiguous.
    std::vector<std::size_t> order(visit.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const int sa = d.visit_subject[static_cast<std::size_t>(visit[a])];
        const int sb = d.visit_subject[static_cast<std::size_t>(visit[b])];
        return sa != sb ? sa < sb : visit[a] < visit[b];
    });

    c.x.resize(static_cast<Eigen::Index>(order.size()), d.X.cols());
    int last_subject = -1;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t j = order[i];
        c.visit.push_back(visit[j]);
        c.n.push_back(n[j]);
        c.sum.push_back(sum[j]);
        c.sum2.push_back(sum2[j]);
        c.x.row(static_cast<Eigen::Index>(i)) = d.X.row(visit[j]);
        c.n_total += n[j];
        const int subj = d.visit_subject[static_cast<std::size_t>(visit[j])];
        if (subj != last_subject) {
            c.subject.push_back(subj);
            c.group_begin.push_back(static_cast<int>(i));
            last_subject = subj;
        }
    }
    c.group_begin.push_back(static_cast<int>(order.size()));
    return c;
}

// ---------------------------------------------------------------------------
// Box-constrained quasi-Newton minimization in two variables (the two
// log-variances), with central-difference gradients and a backtracking line
// search.  The objective callbacks are deterministic, so the accepted-value
// trace is strictly non-increasing.
// ---------------------------------------------------------------------------

struct OptResult {
    Eigen::Vector2d x;
    double f = 0.0;
    std::vector<double> trace;
    bool converged = false;
    int iterations = 0;
};

Eigen::Vector2d fd_gradient(const std::function<double(const Eigen::Vector2d&)>& f,
                            const Eigen::Vector2d& x, double lo, double hi) {
    Eigen::Vector2d g;
    for (int k = 0; k < 2; ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(x[k]));
        Eigen::Vector2d xp = x, xm = x;
        xp[k] = std::min(x[k] + h, hi);
        xm[k] = std::max(x[k] - h, lo);
        const double denom = xp[k] - xm[k];
        g[k] = denom > 0.0 ? (f(xp) - f(xm)) / denom : 0.0;
    }
    return g;
}

OptResult minimize_box(const std::function<double(const Eigen::Vector2d&)>& f,
                       Eigen::Vector2d x0, double lo, double hi,
                       const GlmmControls& ctl) {
    auto clamp = [&](Eigen::Vector2d v) {
        return v.cwiseMax(Eigen::Vector2d::Constant(lo)).cwiseMin(Eigen::Vector2d::Constant(hi));
    };

    OptResult res;
    res.x = clamp(x0);
    res.f = f(res.x);
    res.trace.push_back(res.f);
    Eigen::Matrix2d h_inv = Eigen::Matrix2d::Identity();
    Eigen::Vector2d g = fd_gradient(f, res.x, lo, hi);

    for (int iter = 1; iter <= ctl.max_outer; ++iter) {
        res.iterations = iter;

        Eigen::Vector2d pg = g;  // projected gradient at the bounds
        for (int k = 0; k < 2; ++k) {
            if (res.x[k] <= lo + 1e-12 && g[k] > 0.0) pg[k] = 0.0;
            if (res.x[k] >= hi - 1e-12 && g[k] < 0.0) pg[k] = 0.0;
        }
        if (pg.lpNorm<Eigen::Infinity>() <= ctl.grad_tol) {
            res.converged = true;
            break;
        }

        Eigen::Vector2d d = -h_inv * g;
        if (d.dot(g) > -1e-14) {
            h_inv.setIdentity();
            d = -g;
        }

        double alpha = 1.0;
        bool accepted = false;
        Eigen::Vector2d x_new;
        double f_new = res.f;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = clamp(res.x + alpha * d);
            if ((x_new - res.x).lpNorm<Eigen::Infinity>() == 0.0) break;
            f_new = f(x_new);
            if (f_new <= res.f + 1e-4 * g.dot(x_new - res.x)) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // No descent step exists beyond finite-difference noise.
            res.converged = pg.lpNorm<Eigen::Infinity>() <= 100.0 * ctl.grad_tol;
            break;
        }

        const Eigen::Vector2d s = x_new - res.x;
        const double f_old = res.f;
        res.x = x_new;
        res.f = f_new;
        res.trace.push_back(res.f);

        const Eigen::Vector2d g_new = fd_gradient(f, res.x, lo, hi);
        const Eigen::Vector2d y = g_new - g;
        g = g_new;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const Eigen::Vector2d hy = h_inv * y;
            const double yhy = y.dot(hy);
            h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
                     (hy * s.transpose() + s * hy.transpose()) / sy;
        }

        if (std::abs(f_old - res.f) <= ctl.rel_tol * (std::abs(res.f) + 1.0)) {
            res.converged = true;
            break;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Gaussian REML.  With gamma_a = var_subject / var_residual and gamma_b =
// var_visit / var_residual, the marginal covariance is var_residual * W with
// W = I + gamma_b Zb Zb' + gamma_a Za Za'.  Both random effects are
// intercepts, so W^-1 reduces blockwise: within a visit, (I + gamma_b 11')
// inverts through T_ij = 1 + n_ij gamma_b, and the subject-level coupling
// through c_i = 1 + gamma_a R_i with R_i = sum_j n_ij / T_ij.  The residual
// variance is profiled out of the REML criterion.
// ---------------------------------------------------------------------------

struct GaussEval {
    double deviance = 0.0;
    Eigen::VectorXd beta;
    double q_res = 0.0;  // weighted residual sum of squares at beta-hat
    bool ok = false;
};

GaussEval eval_gaussian(const Cells& c, double gamma_a, double gamma_b) {
    const Eigen::Index p = c.x.cols();
    GaussEval ev;
    Eigen::MatrixXd a_mat = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
    double q = 0.0;
    double logdet_w = 0.0;

    for (std::size_t gidx = 0; gidx < c.n_groups(); ++gidx) {
        const int begin = c.group_begin[gidx];
        const int end = c.group_begin[gidx + 1];
        double r_i = 0.0, q_i = 0.0;
        Eigen::VectorXd h_i = Eigen::VectorXd::Zero(p);
        for (int j = begin; j < end; ++j) {
            const double t = 1.0 + c.n[static_cast<std::size_t>(j)] * gamma_b;
            const double n = c.n[static_cast<std::size_t>(j)];
            const double s = c.sum[static_cast<std::size_t>(j)];
            const Eigen::VectorXd xj = c.x.row(j).transpose();
            a_mat.noalias() += (n / t) * xj * xj.transpose();
            u.noalias() += (s / t) * xj;
            h_i.noalias() += (n / t) * xj;
            q += c.sum2[static_cast<std::size_t>(j)] - gamma_b * s * s / t;
            r_i += n / t;
            q_i += s / t;
            logdet_w += std::log(t);
        }
        const double c_i = 1.0 + gamma_a * r_i;
        a_mat.noalias() -= (gamma_a / c_i) * h_i * h_i.transpose();
        u.noalias() -= (gamma_a / c_i) * q_i * h_i;
        q -= (gamma_a / c_i) * q_i * q_i;
        logdet_w += std::log(c_i);
    }

    Eigen::LDLT<Eigen::MatrixXd> ldlt(a_mat);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) return ev;
    ev.beta = ldlt.solve(u);
    ev.q_res = std::max(q - u.dot(ev.beta), 1e-300);
    const double logdet_a = ldlt.vectorD().array().log().sum();
    ev.deviance = (c.n_total - static_cast<double>(p)) * std::log(ev.q_res) +
                  logdet_w + logdet_a;
    ev.ok = true;
    return ev;
}

// Empirical Bayes predictions of the intercepts at fixed variance ratios.
void gaussian_blups(const Cells& c, double gamma_a, double gamma_b,
                    const Eigen::VectorXd& beta, LocalFit& fit) {
    for (std::size_t gidx = 0; gidx < c.n_groups(); ++gidx) {
        const int begin = c.group_begin[gidx];
        const int end = c.group_begin[gidx + 1];
        double r_i = 0.0, qe_i = 0.0;
        for (int j = begin; j < end; ++j) {
            const std::size_t cj = static_cast<std::size_t>(j);
            const double t = 1.0 + c.n[cj] * gamma_b;
            const double e = c.sum[cj] - c.n[cj] * c.x.row(j).dot(beta);
            r_i += c.n[cj] / t;
            qe_i += e / t;
        }
        const double c_i = 1.0 + gamma_a * r_i;
        const double a_i = gamma_a * qe_i / c_i;
        fit.a_hat[static_cast<std::size_t>(c.subject[gidx])] = a_i;
        fit.subject_in_bin[static_cast<std::size_t>(c.subject[gidx])] = 1;
        for (int j = begin; j < end; ++j) {
            const std::size_t cj = static_cast<std::size_t>(j);
            const double t = 1.0 + c.n[cj] * gamma_b;
            const double e = c.sum[cj] - c.n[cj] * c.x.row(j).dot(beta);
            const double b_ij = gamma_b * (e - c.n[cj] * a_i) / t;
            const std::size_t v = static_cast<std::size_t>(c.visit[cj]);
            fit.b_hat[v] = b_ij;
            fit.visit_in_bin[v] = 1;
            fit.eta_hat[v] = c.x.row(j).dot(beta) + a_i + b_ij;
        }
    }
}

// ---------------------------------------------------------------------------
// Binomial Laplace approximation.  Records collapse to per-cell counts
// (k successes out of n); the joint mode of (beta, a, b) is found by
// penalized IRLS, where each weighted-least-squares step reuses the nested
// elimination above with per-cell working variance 1/w_ij and absolute
// variance components.  The Laplace criterion adds the log-determinant of
// the penalized information at the mode.
// ---------------------------------------------------------------------------

double log1pexp(double eta) { return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta))); }

struct BinomState {
    Eigen::VectorXd beta;
    Eigen::VectorXd a;    // per group
    Eigen::VectorXd b;    // per cell
    Eigen::VectorXd eta;  // per cell
    bool valid = false;
};

double binom_penalized_deviance(const Cells& c, const BinomState& st, double va, double vb) {
    double dev = 0.0;
    for (std::size_t j = 0; j < c.n_cells(); ++j)
        dev += -2.0 * (c.sum[j] * st.eta[static_cast<Eigen::Index>(j)] -
                       c.n[j] * log1pexp(st.eta[static_cast<Eigen::Index>(j)]));
    dev += st.a.squaredNorm() / va + st.b.squaredNorm() / vb;
    return dev;
}

struct BinomEval {
    double objective = 0.0;
    bool inner_converged = false;
};

BinomEval eval_binomial(const Cells& c, double va, double vb, const GlmmControls& ctl,
                        BinomState& st) {
    const Eigen::Index p = c.x.cols();
    const Eigen::Index n_cells = static_cast<Eigen::Index>(c.n_cells());
    const Eigen::Index n_groups = static_cast<Eigen::Index>(c.n_groups());

    if (!st.valid) {
        // The state must satisfy eta = X beta + a + b from the start; an
        // "informed" eta that the parameters cannot reproduce would give the
        // monotone line search an unreachable objective value to defend.
        st.beta = Eigen::VectorXd::Zero(p);
        st.a = Eigen::VectorXd::Zero(n_groups);
        st.b = Eigen::VectorXd::Zero(n_cells);
        st.eta = Eigen::VectorXd::Zero(n_cells);
        st.valid = true;
    }

    BinomEval ev;
    double pdev = binom_penalized_deviance(c, st, va, vb);
    Eigen::VectorXd w(n_cells), z(n_cells);

    for (int iter = 0; iter < ctl.max_inner; ++iter) {
        for (Eigen::Index j = 0; j < n_cells; ++j) {
            const std::size_t sj = static_cast<std::size_t>(j);
            const double mu = expit(st.eta[j]);
            w[j] = std::max(c.n[sj] * mu * (1.0 - mu), 1e-10);
            z[j] = st.eta[j] + (c.sum[sj] - c.n[sj] * mu) / w[j];
        }

        // One weighted-least-squares solve via the nested elimination.
        Eigen::MatrixXd a_mat = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
        std::vector<double> r_group(static_cast<std::size_t>(n_groups));
        for (Eigen::Index g = 0; g < n_groups; ++g) {
            const int begin = c.group_begin[static_cast<std::size_t>(g)];
            const int end = c.group_begin[static_cast<std::size_t>(g) + 1];
            double r_i = 0.0, qz_i = 0.0;
            Eigen::VectorXd h_i = Eigen::VectorXd::Zero(p);
            for (int j = begin; j < end; ++j) {
                const double t = 1.0 / w[j] + vb;
                const Eigen::VectorXd xj = c.x.row(j).transpose();
                a_mat.noalias() += xj * xj.transpose() / t;
                u.noalias() += (z[j] / t) * xj;
                h_i.noalias() += xj / t;
                r_i += 1.0 / t;
                qz_i += z[j] / t;
            }
            const double c_i = 1.0 + va * r_i;
            a_mat.noalias() -= (va / c_i) * h_i * h_i.transpose();
            u.noalias() -= (va / c_i) * qz_i * h_i;
            r_group[static_cast<std::size_t>(g)] = r_i;
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(a_mat);
        if (ldlt.info() != Eigen::Success) return ev;

        BinomState prop = st;
        prop.beta = ldlt.solve(u);
        for (Eigen::Index g = 0; g < n_groups; ++g) {
            const int begin = c.group_begin[static_cast<std::size_t>(g)];
            const int end = c.group_begin[static_cast<std::size_t>(g) + 1];
            double qe_i = 0.0;
            for (int j = begin; j < end; ++j) {
                const double t = 1.0 / w[j] + vb;
                qe_i += (z[j] - c.x.row(j).dot(prop.beta)) / t;
            }
            const double c_i = 1.0 + va * r_group[static_cast<std::size_t>(g)];
            prop.a[g] = va * qe_i / c_i;
            for (int j = begin; j < end; ++j) {
                const double t = 1.0 / w[j] + vb;
                const double e = z[j] - c.x.row(j).dot(prop.beta);
                prop.b[j] = vb * (e - prop.a[g]) / t;
                prop.eta[j] = c.x.row(j).dot(prop.beta) + prop.a[g] + prop.b[j];
            }
        }

        // Step halving keeps the penalized deviance monotone.
        double step = 1.0;
        BinomState trial = prop;
        double pdev_new = binom_penalized_deviance(c, trial, va, vb);
        for (int halving = 0; halving < 30 && pdev_new > pdev + 1e-10; ++halving) {
            step *= 0.5;
            trial.beta = st.beta + step * (prop.beta - st.beta);
            trial.a = st.a + step * (prop.a - st.a);
            trial.b = st.b + step * (prop.b - st.b);
            trial.eta = st.eta + step * (prop.eta - st.eta);
            pdev_new = binom_penalized_deviance(c, trial, va, vb);
        }
        const double delta = (trial.eta - st.eta).lpNorm<Eigen::Infinity>();
        st = trial;
        pdev = pdev_new;
        if (delta < 1e-12 * (1.0 + st.eta.lpNorm<Eigen::Infinity>())) {
            ev.inner_converged = true;
            break;
        }
    }

    // Laplace log-determinant at the mode.
    double logdet = 0.0;
    for (Eigen::Index g = 0; g < n_groups; ++g) {
        const int begin = c.group_begin[static_cast<std::size_t>(g)];
        const int end = c.group_begin[static_cast<std::size_t>(g) + 1];
        double r_i = 0.0;
        for (int j = begin; j < end; ++j) {
            const std::size_t sj = static_cast<std::size_t>(j);
            const double mu = expit(st.eta[j]);
            const double wj = std::max(c.n[sj] * mu * (1.0 - mu), 1e-10);
            logdet += std::log1p(vb * wj);
            r_i += 1.0 / (1.0 / wj + vb);
        }
        logdet += std::log1p(va * r_i);
    }
    ev.objective = pdev + logdet;
    return ev;
}

void check_design_rank(const Cells& c, const FunctionalDataset& d) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(c.x);
    qr.setThreshold(1e-10);
    if (qr.rank() < c.x.cols()) {
        std::string redundant;
        const auto perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < c.x.cols(); ++k) {
            if (!redundant.empty()) redundant += ", ";
            redundant += "'" + d.covariate_names[static_cast<std::size_t>(perm[k])] + "'";
        }
        throw InputError("design matrix is rank-deficient within the bin; column(s) " +
                         redundant + " are collinear with the others");
    }
}

}  // namespace

LocalFit fit_local_glmm(const FunctionalDataset& dataset, const BinnedDataset& binned,
                        std::size_t bin_index, const GlmmControls& controls) {
    if (bin_index >= binned.n_bins()) throw InputError("bin index out of range");

    LocalFit fit;
    fit.bin_index = bin_index;
    fit.bin_center = binned.layout.centers[bin_index];
    fit.beta = Eigen::VectorXd::Constant(dataset.X.cols(), kNaN);
    fit.var_subject = kNaN;
    fit.var_visit = kNaN;
    fit.var_residual = kNaN;
    fit.a_hat.assign(dataset.n_subjects(), 0.0);
    fit.b_hat.assign(dataset.n_visits(), 0.0);
    fit.eta_hat.assign(dataset.n_visits(), kNaN);
    fit.subject_in_bin.assign(dataset.n_subjects(), 0);
    fit.visit_in_bin.assign(dataset.n_visits(), 0);

    const Cells cells = collect_cells(dataset, binned, bin_index);
    if (cells.n_cells() == 0) throw InputError("bin has no records");

    const double p = static_cast<double>(dataset.X.cols());
    if (cells.n_total <= p) {
        fit.warnings.push_back("bin " + std::to_string(bin_index) +
                               ": fewer records than fixed-effect coefficients; fit skipped");
        return fit;
    }
    check_design_rank(cells, dataset);

    const double log_lo = std::log(controls.var_lower);
    const double log_hi = std::log(controls.var_upper);

    if (dataset.family == Family::gaussian) {
        auto objective = [&](const Eigen::Vector2d& log_gamma) {
            const GaussEval ev =
                eval_gaussian(cells, std::exp(log_gamma[0]), std::exp(log_gamma[1]));
            return ev.ok ? ev.deviance : std::numeric_limits<double>::infinity();
        };

        Eigen::Vector2d log_gamma;
        if (controls.fixed_variances) {
            log_gamma = {std::log(std::max(controls.fixed_var_subject, controls.var_lower)),
                         std::log(std::max(controls.fixed_var_visit, controls.var_lower))};
            fit.converged = true;
            fit.objective_trace.push_back(objective(log_gamma));
        } else {
            const OptResult opt = minimize_box(
                objective, Eigen::Vector2d::Constant(std::log(0.5)), log_lo, log_hi, controls);
            log_gamma = opt.x;
            fit.converged = opt.converged;
            fit.iterations = opt.iterations;
            fit.objective_trace = opt.trace;
            if (!opt.converged)
                fit.warnings.push_back("bin " + std::to_string(bin_index) +
                                       ": variance optimization hit the iteration budget");
            for (int k = 0; k < 2; ++k)
                if (opt.x[k] <= log_lo + 1e-9 || opt.x[k] >= log_hi - 1e-9)
                    fit.warnings.push_back("bin " + std::to_string(bin_index) +
                                           ": variance component at the search boundary");
        }

        const double gamma_a = std::exp(log_gamma[0]);
        const double gamma_b = std::exp(log_gamma[1]);
        const GaussEval ev = eval_gaussian(cells, gamma_a, gamma_b);
        if (!ev.ok) {
            fit.converged = false;
            fit.warnings.push_back("bin " + std::to_string(bin_index) +
                                   ": normal equations are numerically singular");
            return fit;
        }
        fit.beta = ev.beta;
        fit.var_residual = ev.q_res / (cells.n_total - p);
        fit.var_subject = gamma_a * fit.var_residual;
        fit.var_visit = gamma_b * fit.var_residual;
        gaussian_blups(cells, gamma_a, gamma_b, ev.beta, fit);
        return fit;
    }

    // Binomial family.
    double successes = 0.0;
    for (double s : cells.sum) successes += s;
    if (successes == 0.0 || successes == cells.n_total) {
        fit.warnings.push_back("bin " + std::to_string(bin_index) +
                               ": all outcomes identical (complete separation); fit skipped");
        return fit;
    }

    BinomState state;  // warm-started across objective evaluations
    bool last_inner_ok = false;
    auto objective = [&](const Eigen::Vector2d& log_var) {
        const BinomEval ev = eval_binomial(cells, std::exp(log_var[0]), std::exp(log_var[1]),
                                           controls, state);
        last_inner_ok = ev.inner_converged;
        return ev.objective;
    };

    Eigen::Vector2d log_var;
    if (controls.fixed_variances) {
        log_var = {std::log(std::max(controls.fixed_var_subject, controls.var_lower)),
                   std::log(std::max(controls.fixed_var_visit, controls.var_lower))};
        fit.objective_trace.push_back(objective(log_var));
        fit.converged = last_inner_ok;
    } else {
        const OptResult opt = minimize_box(
            objective, Eigen::Vector2d::Constant(std::log(0.5)), log_lo, log_hi, controls);
        log_var = opt.x;
        fit.converged = opt.converged;
        fit.iterations = opt.iterations;
        fit.objective_trace = opt.trace;
        if (!opt.converged)
            fit.warnings.push_back("bin " + std::to_string(bin_index) +
                                   ": variance optimization hit the iteration budget");
        for (int k = 0; k < 2; ++k)
            if (opt.x[k] <= log_lo + 1e-9 || opt.x[k] >= log_hi - 1e-9)
                fit.warnings.push_back("bin " + std::to_string(bin_index) +
                                       ": variance component at the search boundary");
    }

    const double va = std::exp(log_var[0]);
    const double vb = std::exp(log_var[1]);
    state.valid = false;  // clean mode at the final variances
    const BinomEval ev = eval_binomial(cells, va, vb, controls, state);
    if (!ev.inner_converged) {
        fit.converged = false;
        fit.warnings.push_back("bin " + std::to_string(bin_index) +
                               ": penalized IRLS did not converge at the final variances");
    }
    fit.beta = state.beta;
    fit.var_subject = va;
    fit.var_visit = vb;
    for (std::size_t g = 0; g < cells.n_groups(); ++g) {
        fit.a_hat[static_cast<std::size_t>(cells.subject[g])] = state.a[static_cast<Eigen::Index>(g)];
        fit.subject_in_bin[static_cast<std::size_t>(cells.subject[g])] = 1;
        for (int j = cells.group_begin[g]; j < cells.group_begin[g + 1]; ++j) {
            const std::size_t v = static_cast<std::size_t>(cells.visit[static_cast<std::size_t>(j)]);
            fit.b_hat[v] = state.b[j];
            fit.visit_in_bin[v] = 1;
            fit.eta_hat[v] = state.eta[j];
        }
    }
    return fit;
}

}  // namespace frim
