#include "frim/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <string>

#include "frim/inference.hpp"
#include "frim/parallel.hpp"
#include "frim/stats.hpp"

namespace frim {
namespace {

// Orthonormal trigonometric block on [0, 1]: pairs
//   sqrt(2) sin(2 pi m s), sqrt(2) cos(2 pi m s)   for m = first_freq, ...
Eigen::MatrixXd trig_block(const std::vector<double>& grid, int first_freq, int k) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(grid.size()), k);
    constexpr double root2 = std::numbers::sqrt2;
    for (std::size_t l = 0; l < grid.size(); ++l)
        for (int j = 0; j < k; ++j) {
            const double arg = 2.0 * std::numbers::pi * (first_freq + j / 2) * grid[l];
            out(static_cast<Eigen::Index>(l), j) = root2 * (j % 2 == 0 ? std::sin(arg) : std::cos(arg));
        }
    return out;
}

// First four shifted Legendre polynomials, orthonormal on [0, 1].
Eigen::MatrixXd legendre_block(const std::vector<double>& grid, int k) {
    if (k > 4) throw InputError("polynomial visit basis supports at most 4 components");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(grid.size()), k);
    for (std::size_t l = 0; l < grid.size(); ++l) {
        const double s = grid[l];
        const double p[4] = {1.0, std::sqrt(3.0) * (2.0 * s - 1.0),
                             std::sqrt(5.0) * (6.0 * s * s - 6.0 * s + 1.0),
                             std::sqrt(7.0) * (20.0 * s * s * s - 30.0 * s * s + 12.0 * s - 1.0)};
        for (int j = 0; j < k; ++j) out(static_cast<Eigen::Index>(l), j) = p[j];
    }
    return out;
}

std::string padded_label(const char* prefix, int index, int total) {
    int width = 1;
    for (int t = total; t >= 10; t /= 10) ++width;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, std::min(width, 10), index + 1);
    return buf;
}

}  // namespace

SimulatedData generate_dataset(const SimConfig& config, std::uint64_t score_seed,
                               std::uint64_t noise_seed) {
    if (config.n_subjects < 1 || config.n_visits < 1 || config.grid_len < 2)
        throw InputError("simulation needs at least one subject, one visit, and two grid points");
    if (config.k1 < 1 || config.k2 < 1)
        throw InputError("simulation needs at least one component per level");
    const int I = config.n_subjects, J = config.n_visits, L = config.grid_len;
    const std::size_t n_visits = static_cast<std::size_t>(I) * static_cast<std::size_t>(J);

    SimTruth truth;
    truth.grid.resize(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) truth.grid[static_cast<std::size_t>(l)] = (l + 1.0) / L;

    truth.phi = trig_block(truth.grid, 2, config.k1);
    truth.psi = config.visit_basis == VisitBasis::trig_basis
                    ? trig_block(truth.grid, 4, config.k2)
                    : legendre_block(truth.grid, config.k2);
    truth.lambda1.resize(config.k1);
    for (int k = 0; k < config.k1; ++k) truth.lambda1[k] = std::pow(0.5, k);
    truth.lambda2.resize(config.k2);
    for (int k = 0; k < config.k2; ++k) truth.lambda2[k] = std::pow(0.5, k);

    truth.beta.resize(L);
    for (int l = 0; l < L; ++l)
        truth.beta[l] = std::numbers::sqrt2 *
                        std::sin(2.0 * std::numbers::pi * truth.grid[static_cast<std::size_t>(l)]);

    Rng score_rng = Rng::derive(score_seed, {0x73636f7265u});
    truth.xi.resize(I, config.k1);
    for (int i = 0; i < I; ++i)
        for (int k = 0; k < config.k1; ++k)
            truth.xi(i, k) = std::sqrt(truth.lambda1[k]) * score_rng.normal();
    truth.zeta.resize(static_cast<Eigen::Index>(n_visits), config.k2);
    for (std::size_t v = 0; v < n_visits; ++v)
        for (int k = 0; k < config.k2; ++k)
            truth.zeta(static_cast<Eigen::Index>(v), k) =
                std::sqrt(truth.lambda2[k]) * score_rng.normal();

    truth.r.resize(static_cast<Eigen::Index>(n_visits), L);
    truth.eta.resize(static_cast<Eigen::Index>(n_visits), L);
    for (std::size_t v = 0; v < n_visits; ++v) {
        const int i = static_cast<int>(v) / J;
        truth.r.row(static_cast<Eigen::Index>(v)) =
            truth.xi.row(i) * truth.phi.transpose() +
            truth.zeta.row(static_cast<Eigen::Index>(v)) * truth.psi.transpose();
        truth.eta.row(static_cast<Eigen::Index>(v)) =
            truth.beta.transpose() + truth.r.row(static_cast<Eigen::Index>(v));
    }

    FunctionalDataset data;
    data.family = config.family;
    data.subject_ids.reserve(static_cast<std::size_t>(I));
    for (int i = 0; i < I; ++i) data.subject_ids.push_back(padded_label("S", i, I));
    data.visit_ids.reserve(n_visits);
    data.visit_subject.reserve(n_visits);
    for (int i = 0; i < I; ++i)
        for (int j = 0; j < J; ++j) {
            data.visit_ids.push_back(std::to_string(j + 1));
            data.visit_subject.push_back(i);
        }
    data.X = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n_visits), 1);
    data.covariate_names = {"(intercept)"};

    Rng noise_rng = Rng::derive(noise_seed, {0x6e6f697365u});
    const double sigma = std::sqrt(config.sigma2);
    data.rec_visit.reserve(n_visits * static_cast<std::size_t>(L));
    data.rec_s.reserve(n_visits * static_cast<std::size_t>(L));
    data.rec_y.reserve(n_visits * static_cast<std::size_t>(L));
    for (std::size_t v = 0; v < n_visits; ++v)
        for (int l = 0; l < L; ++l) {
            const double eta = truth.eta(static_cast<Eigen::Index>(v), l);
            double y;
            if (config.family == Family::gaussian)
                y = eta + sigma * noise_rng.normal();
            else
                y = noise_rng.uniform() < expit(eta) ? 1.0 : 0.0;
            data.rec_visit.push_back(static_cast<std::uint32_t>(v));
            data.rec_s.push_back(truth.grid[static_cast<std::size_t>(l)]);
            data.rec_y.push_back(y);
        }
    data.finalize();

    SimulatedData out;
    out.truth = std::move(truth);
    out.removed.assign(n_visits, std::vector<std::uint8_t>(static_cast<std::size_t>(L), 0));
    if (config.missing_visit_prob > 0.0 && config.missing_frac > 0.0)
        out.dataset = inject_missingness(data, out.truth, config.missing_visit_prob,
                                         config.missing_frac, noise_rng, out.removed);
    else
        out.dataset = std::move(data);
    return out;
}

FunctionalDataset inject_missingness(const FunctionalDataset& complete, const SimTruth& truth,
                                     double visit_prob, double frac, Rng& rng,
                                     std::vector<std::vector<std::uint8_t>>& removed) {
    if (visit_prob < 0.0 || visit_prob > 1.0 || frac < 0.0 || frac > 1.0)
        throw InputError("missingness probability and fraction must lie in [0, 1]");
    const std::size_t n_visits = complete.n_visits();
    const std::size_t L = truth.grid.size();
    removed.assign(n_visits, std::vector<std::uint8_t>(L, 0));

    // Half-open block per flagged visit: grid points with s_a <= s < s_a + frac
    // go missing; a block near the right edge is simply truncated there.
    for (std::size_t v = 0; v < n_visits; ++v) {
        if (rng.uniform() >= visit_prob) continue;
        const double s_a = truth.grid[rng.uniform_int(L)];
        for (std::size_t l = 0; l < L; ++l)
            if (truth.grid[l] >= s_a && truth.grid[l] < s_a + frac) removed[v][l] = 1;
    }

    FunctionalDataset thinned;
    thinned.family = complete.family;
    thinned.subject_ids = complete.subject_ids;
    thinned.visit_ids = complete.visit_ids;
    thinned.visit_subject = complete.visit_subject;
    thinned.X = complete.X;
    thinned.covariate_names = complete.covariate_names;
    for (std::size_t r = 0; r < complete.n_records(); ++r) {
        const std::size_t v = complete.rec_visit[r];
        // Locate the record on the generator grid by value.
        std::size_t l = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < L; ++c) {
            const double d = std::abs(truth.grid[c] - complete.rec_s[r]);
            if (d < best) {
                best = d;
                l = c;
            }
        }
        if (removed[v][l]) continue;
        thinned.rec_visit.push_back(complete.rec_visit[r]);
        thinned.rec_s.push_back(complete.rec_s[r]);
        thinned.rec_y.push_back(complete.rec_y[r]);
    }
    thinned.finalize();
    return thinned;
}

StudyResult run_coverage_study(const StudyConfig& config) {
    if (config.replicates < 1) throw InputError("coverage study needs at least one replicate");
    const std::size_t R = static_cast<std::size_t>(config.replicates);

    // Pre-derive every replicate's seeds so results do not depend on worker
    // scheduling.
    std::vector<std::uint64_t> score_seeds(R), noise_seeds(R), chain_seeds(R);
    {
        Rng master = Rng::derive(config.seed, {0x7374756479u});
        const std::uint64_t shared_scores = master.next_u64();
        for (std::size_t t = 0; t < R; ++t) {
            const std::uint64_t fresh = master.next_u64();
            score_seeds[t] = config.fixed_scores ? shared_scores : fresh;
            noise_seeds[t] = master.next_u64();
            chain_seeds[t] = master.next_u64();
        }
    }

    struct RepOutcome {
        bool ok = false;
        std::string error;
        std::size_t covered = 0, total = 0;
        std::size_t covered_masked = 0, total_masked = 0;
        double mpcp = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<RepOutcome> outcomes(R);

    parallel_for(R, config.workers, [&](std::size_t t) {
        RepOutcome& out = outcomes[t];
        try {
            const SimulatedData sim = generate_dataset(config.sim, score_seeds[t], noise_seeds[t]);
            PipelineSettings settings = config.pipeline;
            settings.sampler.seed = chain_seeds[t];
            const FitResult fit = fit_frim(sim.dataset, settings);
            const std::vector<CredibleBands> bands = summarize_random_effects(
                fit.draws, EffectLevel::combined, config.alpha, sim.truth.grid);

            const CoverageReport rep = compute_mpcp(bands, sim.truth.r);
            out.covered = rep.n_covered;
            out.total = rep.n_total;
            out.mpcp = rep.mpcp;
            bool any_removed = false;
            for (const auto& row : sim.removed)
                for (const std::uint8_t f : row) any_removed |= f != 0;
            if (any_removed) {
                const CoverageReport masked = compute_mpcp(bands, sim.truth.r, sim.removed);
                out.covered_masked = masked.n_covered;
                out.total_masked = masked.n_total;
            }
            out.ok = true;
        } catch (const std::exception& e) {
            out.error = e.what();
        }
    });

    StudyResult result;
    std::size_t covered = 0, total = 0, covered_masked = 0, total_masked = 0;
    for (std::size_t t = 0; t < R; ++t) {
        const RepOutcome& out = outcomes[t];
        if (!out.ok) {
            ++result.n_failed;
            result.failures.push_back("replicate " + std::to_string(t + 1) + ": " + out.error);
            continue;
        }
        ++result.n_ok;
        result.replicate_mpcp.push_back(out.mpcp);
        covered += out.covered;
        total += out.total;
        covered_masked += out.covered_masked;
        total_masked += out.total_masked;
    }
    if (result.n_failed * 5 > config.replicates) {
        std::string msg = "coverage study: more than 20% of replicates failed";
        for (const auto& f : result.failures) msg += "\n  " + f;
        throw ConvergenceError(msg);
    }
    result.mpcp = total > 0 ? static_cast<double>(covered) / static_cast<double>(total)
                            : std::numeric_limits<double>::quiet_NaN();
    result.mpcp_masked = total_masked > 0
                             ? static_cast<double>(covered_masked) / static_cast<double>(total_masked)
                             : std::numeric_limits<double>::quiet_NaN();
    return result;
}

}  // namespace frim
