#include "frim/sampler.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

#include "frim/diagnostics.hpp"
#include "frim/parallel.hpp"
#include "frim/polyagamma.hpp"
#include "frim/rng.hpp"
#include "frim/slice.hpp"
#include "frim/stats.hpp"

namespace frim {

Eigen::RowVectorXd interp_row(const std::vector<double>& grid, const Eigen::MatrixXd& values,
                              double s) {
    if (grid.empty() || values.rows() != static_cast<Eigen::Index>(grid.size()))
        throw InputError("interpolation grid does not match the value rows");
    if (s <= grid.front()) return values.row(0);
    if (s >= grid.back()) return values.row(values.rows() - 1);
    const auto it = std::upper_bound(grid.begin(), grid.end(), s);
    const Eigen::Index hi = static_cast<Eigen::Index>(it - grid.begin());
    const Eigen::Index lo = hi - 1;
    const double t = (s - grid[static_cast<std::size_t>(lo)]) /
                     (grid[static_cast<std::size_t>(hi)] - grid[static_cast<std::size_t>(lo)]);
    return (1.0 - t) * values.row(lo) + t * values.row(hi);
}

SamplerInputs build_design(const FunctionalDataset& dataset, const MfpcaResult& mfpca_result,
                           const FunctionalCoefficients& coefs) {
    if (mfpca_result.k1 < 1 || mfpca_result.k2 < 1)
        throw InputError("sampler design needs at least one eigenfunction per level");

    SamplerInputs in;
    in.family = dataset.family;
    in.n_subjects = dataset.n_subjects();
    in.visit_subject = dataset.visit_subject;
    in.subject_ids = dataset.subject_ids;
    in.visit_ids = dataset.visit_ids;
    in.grid = mfpca_result.grid;
    in.phi_grid = mfpca_result.phi;
    in.psi_grid = mfpca_result.psi;
    in.lambda1 = mfpca_result.lambda1;
    in.lambda2 = mfpca_result.lambda2;
    in.sigma2_init = mfpca_result.sigma2_noise > 0.0 ? mfpca_result.sigma2_noise : 1.0;

    const std::size_t n = dataset.n_records();
    in.rec_visit = dataset.rec_visit;
    in.rec_y = dataset.rec_y;
    in.rec_offset.resize(n);
    in.phi_rec.resize(static_cast<Eigen::Index>(n), mfpca_result.k1);
    in.psi_rec.resize(static_cast<Eigen::Index>(n), mfpca_result.k2);
    for (std::size_t r = 0; r < n; ++r) {
        const double s = dataset.rec_s[r];
        const Eigen::Index v = static_cast<Eigen::Index>(dataset.rec_visit[r]);
        in.rec_offset[r] = dataset.X.row(v).dot(coefs.evaluate(s));
        in.phi_rec.row(static_cast<Eigen::Index>(r)) = interp_row(in.grid, in.phi_grid, s);
        in.psi_rec.row(static_cast<Eigen::Index>(r)) = interp_row(in.grid, in.psi_grid, s);
    }
    return in;
}

namespace {

// Per-visit second-moment blocks of the score design.  For the Gaussian
// family these are computed once; for the binomial family they are
// reaccumulated every iteration with the Polya-Gamma weights folded in.
struct VisitBlock {
    Eigen::MatrixXd g;  // K1 x K1
    Eigen::MatrixXd h;  // K2 x K2
    Eigen::MatrixXd c;  // K1 x K2
    Eigen::VectorXd p;  // K1
    Eigen::VectorXd q;  // K2
    double sum2 = 0.0;  // sum (y - offset)^2, Gaussian only
    double n = 0.0;

    void zero(int k1, int k2) {
        g = Eigen::MatrixXd::Zero(k1, k1);
        h = Eigen::MatrixXd::Zero(k2, k2);
        c = Eigen::MatrixXd::Zero(k1, k2);
        p = Eigen::VectorXd::Zero(k1);
        q = Eigen::VectorXd::Zero(k2);
        sum2 = 0.0;
        n = 0.0;
    }
};

// Draw from N(P^-1 rhs, P^-1) via the Cholesky factor of the precision P.
Eigen::VectorXd draw_gaussian_block(const Eigen::MatrixXd& precision,
                                    const Eigen::VectorXd& rhs, Rng& rng) {
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success)
        throw ConvergenceError("score-update precision matrix is not positive definite");
    Eigen::VectorXd z(rhs.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return llt.solve(rhs) + llt.matrixU().solve(z);
}

// log posterior density of w = log(variance) given n attached effects with
// sum of squares s, under a half-Cauchy(0, 1) prior on the precision.
double log_variance_target(double w, double n, double s) {
    return -0.5 * n * w - 0.5 * s * std::exp(-w) - w - std::log1p(std::exp(-2.0 * w));
}

struct ChainState {
    Eigen::MatrixXd xi;    // n_subjects x K1
    Eigen::MatrixXd zeta;  // n_visits x K2
    Eigen::VectorXd var1, var2;
    double sigma2 = 1.0;
};

}  // namespace

PosteriorDraws run_mcmc(const SamplerInputs& inputs, const SamplerConfig& config) {
    const int k1 = inputs.k1();
    const int k2 = inputs.k2();
    const std::size_t n_subjects = inputs.n_subjects;
    const std::size_t n_visits = inputs.n_visits();
    const std::size_t n_records = inputs.n_records();

    if (config.chains < 1) throw InputError("sampler needs at least one chain");
    if (config.draws < 1) throw InputError("sampler needs at least one kept draw");
    if (config.warmup < 0) throw InputError("warmup cannot be negative");
    if (k1 < 1 || k2 < 1) throw InputError("sampler needs at least one component per level");
    if (inputs.rec_visit.size() != n_records || inputs.rec_offset.size() != n_records ||
        inputs.phi_rec.rows() != static_cast<Eigen::Index>(n_records) ||
        inputs.psi_rec.rows() != static_cast<Eigen::Index>(n_records))
        throw InputError("sampler inputs have inconsistent record arrays");
    for (const std::uint32_t v : inputs.rec_visit)
        if (v >= n_visits) throw InputError("sampler record refers to an unknown visit");

    // Initial variances: explicit overrides, else the eigenvalue scales.
    Eigen::VectorXd var1_init = config.init_var_subject.size() > 0
                                    ? config.init_var_subject
                                    : inputs.lambda1;
    Eigen::VectorXd var2_init = config.init_var_visit.size() > 0 ? config.init_var_visit
                                                                 : inputs.lambda2;
    if (var1_init.size() != k1 || var2_init.size() != k2)
        throw InputError("initial variance vectors do not match the component counts");
    var1_init = var1_init.cwiseMax(1e-8);
    var2_init = var2_init.cwiseMax(1e-8);
    const double sigma2_init =
        config.init_sigma2 > 0.0 ? config.init_sigma2 : std::max(inputs.sigma2_init, 1e-8);

    const bool gaussian = inputs.family == Family::gaussian;

    // Visits grouped by subject for the subject-block updates.
    std::vector<std::vector<int>> subject_visits(n_subjects);
    for (std::size_t v = 0; v < n_visits; ++v) {
        const int subj = inputs.visit_subject[v];
        if (subj < 0 || static_cast<std::size_t>(subj) >= n_subjects)
            throw InputError("sampler visit refers to an unknown subject");
        subject_visits[static_cast<std::size_t>(subj)].push_back(static_cast<int>(v));
    }

    // Gaussian-family blocks are data-only and shared across chains.
    std::vector<VisitBlock> fixed_blocks;
    if (gaussian) {
        fixed_blocks.resize(n_visits);
        for (auto& b : fixed_blocks) b.zero(k1, k2);
        for (std::size_t r = 0; r < n_records; ++r) {
            VisitBlock& b = fixed_blocks[inputs.rec_visit[r]];
            const auto phi = inputs.phi_rec.row(static_cast<Eigen::Index>(r));
            const auto psi = inputs.psi_rec.row(static_cast<Eigen::Index>(r));
            const double resid = inputs.rec_y[r] - inputs.rec_offset[r];
            b.g.noalias() += phi.transpose() * phi;
            b.h.noalias() += psi.transpose() * psi;
            b.c.noalias() += phi.transpose() * psi;
            b.p.noalias() += phi.transpose() * resid;
            b.q.noalias() += psi.transpose() * resid;
            b.sum2 += resid * resid;
            b.n += 1.0;
        }
    }

    PosteriorDraws out;
    out.family = inputs.family;
    out.chains = config.chains;
    out.draws_per_chain = static_cast<std::size_t>(config.draws);
    out.n_subjects = n_subjects;
    out.n_visits = n_visits;
    out.k1 = k1;
    out.k2 = k2;
    out.subject_ids = inputs.subject_ids;
    out.visit_ids = inputs.visit_ids;
    out.visit_subject = inputs.visit_subject;
    out.grid = inputs.grid;
    out.phi_grid = inputs.phi_grid;
    out.psi_grid = inputs.psi_grid;
    out.xi.resize(static_cast<std::size_t>(config.chains));
    out.zeta.resize(static_cast<std::size_t>(config.chains));
    out.var_subject.resize(static_cast<std::size_t>(config.chains));
    out.var_visit.resize(static_cast<std::size_t>(config.chains));
    if (gaussian) out.sigma2.resize(static_cast<std::size_t>(config.chains));

    auto run_chain = [&](std::size_t chain) {
        Rng rng = Rng::derive(config.seed, {0x636861696eULL, chain});

        ChainState st;
        st.xi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_subjects), k1);
        st.zeta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_visits), k2);
        st.var1 = var1_init;
        st.var2 = var2_init;
        st.sigma2 = sigma2_init;
        if (!config.fix_variances) {
            // Overdispersed starts across chains.
            for (int k = 0; k < k1; ++k) st.var1[k] *= std::exp(0.3 * rng.normal());
            for (int k = 0; k < k2; ++k) st.var2[k] *= std::exp(0.3 * rng.normal());
            if (gaussian) st.sigma2 *= std::exp(0.3 * rng.normal());
        }

        Eigen::MatrixXd& xi_out = out.xi[chain];
        Eigen::MatrixXd& zeta_out = out.zeta[chain];
        xi_out.resize(config.draws, static_cast<Eigen::Index>(n_subjects) * k1);
        zeta_out.resize(config.draws, static_cast<Eigen::Index>(n_visits) * k2);
        out.var_subject[chain].resize(config.draws, k1);
        out.var_visit[chain].resize(config.draws, k2);
        if (gaussian) out.sigma2[chain].resize(config.draws);

        std::vector<VisitBlock> pg_blocks;
        if (!gaussian) {
            pg_blocks.resize(n_visits);
            for (auto& b : pg_blocks) b.zero(k1, k2);
        }

        const int total_iters = config.warmup + config.draws;
        for (int iter = 0; iter < total_iters; ++iter) {
            const std::vector<VisitBlock>* blocks = &fixed_blocks;
            double scale = st.sigma2;  // likelihood precision divisor

            if (!gaussian) {
                // Polya-Gamma augmentation: one weight per record, then the
                // same block structure with the weights folded in and unit
                // scale.
                for (auto& b : pg_blocks) b.zero(k1, k2);
                for (std::size_t r = 0; r < n_records; ++r) {
                    const std::uint32_t v = inputs.rec_visit[r];
                    const int subj = inputs.visit_subject[v];
                    const auto phi = inputs.phi_rec.row(static_cast<Eigen::Index>(r));
                    const auto psi = inputs.psi_rec.row(static_cast<Eigen::Index>(r));
                    const double eta = inputs.rec_offset[r] +
                                       phi.dot(st.xi.row(subj)) +
                                       psi.dot(st.zeta.row(static_cast<Eigen::Index>(v)));
                    const double omega = pg_draw(rng, eta);
                    const double kappa = inputs.rec_y[r] - 0.5;
                    VisitBlock& b = pg_blocks[v];
                    b.g.noalias() += omega * phi.transpose() * phi;
                    b.h.noalias() += omega * psi.transpose() * psi;
                    b.c.noalias() += omega * phi.transpose() * psi;
                    b.p.noalias() += phi.transpose() * (kappa - omega * inputs.rec_offset[r]);
                    b.q.noalias() += psi.transpose() * (kappa - omega * inputs.rec_offset[r]);
                }
                blocks = &pg_blocks;
                scale = 1.0;
            }

            // Subject score blocks.
            for (std::size_t i = 0; i < n_subjects; ++i) {
                Eigen::MatrixXd precision =
                    st.var1.cwiseInverse().asDiagonal().toDenseMatrix();
                Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k1);
                for (const int v : subject_visits[i]) {
                    const VisitBlock& b = (*blocks)[static_cast<std::size_t>(v)];
                    precision.noalias() += b.g / scale;
                    rhs.noalias() += (b.p - b.c * st.zeta.row(v).transpose()) / scale;
                }
                st.xi.row(static_cast<Eigen::Index>(i)) =
                    draw_gaussian_block(precision, rhs, rng).transpose();
            }

            // Visit score blocks (empty visits fall back to the prior).
            for (std::size_t v = 0; v < n_visits; ++v) {
                const VisitBlock& b = (*blocks)[v];
                const int subj = inputs.visit_subject[v];
                Eigen::MatrixXd precision =
                    st.var2.cwiseInverse().asDiagonal().toDenseMatrix();
                precision.noalias() += b.h / scale;
                const Eigen::VectorXd rhs =
                    (b.q - b.c.transpose() * st.xi.row(subj).transpose()) / scale;
                st.zeta.row(static_cast<Eigen::Index>(v)) =
                    draw_gaussian_block(precision, rhs, rng).transpose();
            }

            if (!config.fix_variances) {
                for (int k = 0; k < k1; ++k) {
                    const double s = std::max(st.xi.col(k).squaredNorm(), 1e-300);
                    const double w = slice_sample(
                        std::log(st.var1[k]),
                        [&](double x) {
                            return log_variance_target(x, static_cast<double>(n_subjects), s);
                        },
                        rng);
                    st.var1[k] = std::exp(w);
                }
                for (int k = 0; k < k2; ++k) {
                    const double s = std::max(st.zeta.col(k).squaredNorm(), 1e-300);
                    const double w = slice_sample(
                        std::log(st.var2[k]),
                        [&](double x) {
                            return log_variance_target(x, static_cast<double>(n_visits), s);
                        },
                        rng);
                    st.var2[k] = std::exp(w);
                }
                if (gaussian) {
                    double rss = 0.0;
                    for (std::size_t v = 0; v < n_visits; ++v) {
                        const VisitBlock& b = fixed_blocks[v];
                        if (b.n == 0.0) continue;
                        const Eigen::VectorXd xi_i =
                            st.xi.row(inputs.visit_subject[v]).transpose();
                        const Eigen::VectorXd zeta_v =
                            st.zeta.row(static_cast<Eigen::Index>(v)).transpose();
                        rss += b.sum2 - 2.0 * xi_i.dot(b.p) - 2.0 * zeta_v.dot(b.q) +
                               xi_i.dot(b.g * xi_i) + 2.0 * xi_i.dot(b.c * zeta_v) +
                               zeta_v.dot(b.h * zeta_v);
                    }
                    rss = std::max(rss, 1e-300);
                    const double w = slice_sample(
                        std::log(st.sigma2),
                        [&](double x) {
                            return log_variance_target(x, static_cast<double>(n_records), rss);
                        },
                        rng);
                    st.sigma2 = std::exp(w);
                }
            }

            const int kept = iter - config.warmup;
            if (kept >= 0) {
                for (std::size_t i = 0; i < n_subjects; ++i)
                    for (int k = 0; k < k1; ++k)
                        xi_out(kept, static_cast<Eigen::Index>(i) * k1 + k) =
                            st.xi(static_cast<Eigen::Index>(i), k);
                for (std::size_t v = 0; v < n_visits; ++v)
                    for (int k = 0; k < k2; ++k)
                        zeta_out(kept, static_cast<Eigen::Index>(v) * k2 + k) =
                            st.zeta(static_cast<Eigen::Index>(v), k);
                out.var_subject[chain].row(kept) = st.var1.transpose();
                out.var_visit[chain].row(kept) = st.var2.transpose();
                if (gaussian) out.sigma2[chain][kept] = st.sigma2;
            }
        }
    };

    parallel_for(static_cast<std::size_t>(config.chains), config.workers, run_chain);

    // Convergence diagnostics on the variance-type parameters.
    auto add_diag = [&](const std::string& name, auto get_col) {
        std::vector<std::vector<double>> per_chain;
        for (int c = 0; c < config.chains; ++c) {
            std::vector<double> v(static_cast<std::size_t>(config.draws));
            for (int d = 0; d < config.draws; ++d) v[static_cast<std::size_t>(d)] = get_col(c, d);
            per_chain.push_back(std::move(v));
        }
        ParamDiagnostic diag;
        diag.name = name;
        diag.rhat = split_rhat(per_chain);
        diag.ess = effective_sample_size(per_chain);
        out.max_variance_rhat = std::max(out.max_variance_rhat, diag.rhat);
        if (diag.rhat > 1.1)
            out.warnings.push_back("WARNING: split R-hat for " + name + " is " +
                                   std::to_string(diag.rhat) +
                                   " (> 1.1); results may be unreliable");
        out.diagnostics.push_back(std::move(diag));
    };
    if (!config.fix_variances && config.draws >= 4) {
        for (int k = 0; k < k1; ++k)
            add_diag("var_subject[" + std::to_string(k + 1) + "]",
                     [&](int c, int d) { return out.var_subject[static_cast<std::size_t>(c)](d, k); });
        for (int k = 0; k < k2; ++k)
            add_diag("var_visit[" + std::to_string(k + 1) + "]",
                     [&](int c, int d) { return out.var_visit[static_cast<std::size_t>(c)](d, k); });
        if (gaussian)
            add_diag("sigma2", [&](int c, int d) { return out.sigma2[static_cast<std::size_t>(c)][d]; });
    }
    return out;
}

namespace {

struct GridBasis {
    std::vector<double> grid;
    Eigen::MatrixXd phi;  // G x K1
    Eigen::MatrixXd psi;  // G x K2
};

GridBasis resolve_grid(const PosteriorDraws& draws, const std::vector<double>& grid) {
    GridBasis gb;
    if (grid.empty()) {
        gb.grid = draws.grid;
        gb.phi = draws.phi_grid;
        gb.psi = draws.psi_grid;
        return gb;
    }
    gb.grid = grid;
    gb.phi.resize(static_cast<Eigen::Index>(grid.size()), draws.k1);
    gb.psi.resize(static_cast<Eigen::Index>(grid.size()), draws.k2);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        gb.phi.row(static_cast<Eigen::Index>(g)) = interp_row(draws.grid, draws.phi_grid, grid[g]);
        gb.psi.row(static_cast<Eigen::Index>(g)) = interp_row(draws.grid, draws.psi_grid, grid[g]);
    }
    return gb;
}

// Pointwise mean and type-7 quantile band over the stacked chain curves.
CredibleBands band_from_curves(Eigen::MatrixXd curves, const std::vector<double>& grid,
                               double alpha) {
    CredibleBands band;
    band.grid = grid;
    band.alpha = alpha;
    const Eigen::Index g_count = curves.cols();
    band.mean.resize(static_cast<std::size_t>(g_count));
    band.lower.resize(static_cast<std::size_t>(g_count));
    band.upper.resize(static_cast<std::size_t>(g_count));
    std::vector<double> col(static_cast<std::size_t>(curves.rows()));
    for (Eigen::Index g = 0; g < g_count; ++g) {
        band.mean[static_cast<std::size_t>(g)] = curves.col(g).mean();
        for (Eigen::Index d = 0; d < curves.rows(); ++d)
            col[static_cast<std::size_t>(d)] = curves(d, g);
        band.lower[static_cast<std::size_t>(g)] = quantile_type7_inplace(col, alpha / 2.0);
        band.upper[static_cast<std::size_t>(g)] = quantile_type7_inplace(col, 1.0 - alpha / 2.0);
    }
    return band;
}

Eigen::MatrixXd entity_curves(const PosteriorDraws& draws, const GridBasis& gb,
                              EffectLevel level, std::size_t entity) {
    const std::size_t total = draws.total_draws();
    Eigen::MatrixXd curves(static_cast<Eigen::Index>(total), gb.phi.rows());
    Eigen::Index row = 0;
    for (int c = 0; c < draws.chains; ++c) {
        const Eigen::Index d = static_cast<Eigen::Index>(draws.draws_per_chain);
        switch (level) {
            case EffectLevel::subject:
                curves.middleRows(row, d).noalias() =
                    draws.xi[static_cast<std::size_t>(c)].middleCols(
                        static_cast<Eigen::Index>(entity) * draws.k1, draws.k1) *
                    gb.phi.transpose();
                break;
            case EffectLevel::subject_visit:
                curves.middleRows(row, d).noalias() =
                    draws.zeta[static_cast<std::size_t>(c)].middleCols(
                        static_cast<Eigen::Index>(entity) * draws.k2, draws.k2) *
                    gb.psi.transpose();
                break;
            case EffectLevel::combined: {
                const std::size_t subj =
                    static_cast<std::size_t>(draws.visit_subject[entity]);
                curves.middleRows(row, d).noalias() =
                    draws.xi[static_cast<std::size_t>(c)].middleCols(
                        static_cast<Eigen::Index>(subj) * draws.k1, draws.k1) *
                        gb.phi.transpose() +
                    draws.zeta[static_cast<std::size_t>(c)].middleCols(
                        static_cast<Eigen::Index>(entity) * draws.k2, draws.k2) *
                        gb.psi.transpose();
                break;
            }
        }
        row += d;
    }
    return curves;
}

}  // namespace

std::vector<CredibleBands> summarize_random_effects(const PosteriorDraws& draws,
                                                    EffectLevel level, double alpha,
                                                    const std::vector<double>& grid) {
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
    if (draws.chains == 0) throw InputError("no draws to summarize");
    const GridBasis gb = resolve_grid(draws, grid);

    const std::size_t n_entities =
        level == EffectLevel::subject ? draws.n_subjects : draws.n_visits;
    std::vector<CredibleBands> bands;
    bands.reserve(n_entities);
    for (std::size_t e = 0; e < n_entities; ++e) {
        CredibleBands band = band_from_curves(entity_curves(draws, gb, level, e), gb.grid, alpha);
        if (level == EffectLevel::subject) {
            band.subject_id = draws.subject_ids[e];
        } else {
            band.subject_id =
                draws.subject_ids[static_cast<std::size_t>(draws.visit_subject[e])];
            band.visit_id = draws.visit_ids[e];
        }
        bands.push_back(std::move(band));
    }
    return bands;
}

CredibleBands summarize_one(const PosteriorDraws& draws, EffectLevel level,
                            const std::string& subject_id, const std::string& visit_id,
                            double alpha, const std::vector<double>& grid) {
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
    const GridBasis gb = resolve_grid(draws, grid);

    const auto subj_it =
        std::find(draws.subject_ids.begin(), draws.subject_ids.end(), subject_id);
    if (subj_it == draws.subject_ids.end())
        throw InputError("unknown subject '" + subject_id + "'");
    const std::size_t subj = static_cast<std::size_t>(subj_it - draws.subject_ids.begin());

    std::size_t entity = subj;
    if (level != EffectLevel::subject) {
        bool found = false;
        for (std::size_t v = 0; v < draws.n_visits; ++v) {
            if (static_cast<std::size_t>(draws.visit_subject[v]) == subj &&
                draws.visit_ids[v] == visit_id) {
                entity = v;
                found = true;
                break;
            }
        }
        if (!found)
            throw InputError("unknown visit '" + visit_id + "' for subject '" + subject_id + "'");
    }

    CredibleBands band = band_from_curves(entity_curves(draws, gb, level, entity), gb.grid, alpha);
    band.subject_id = subject_id;
    if (level != EffectLevel::subject) band.visit_id = visit_id;
    return band;
}

}  // namespace frim
