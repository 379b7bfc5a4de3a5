#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "frim/common.hpp"
#include "frim/diagnostics.hpp"
#include "frim/rng.hpp"
#include "frim/stats.hpp"

namespace {

std::vector<std::vector<double>> iid_chains(int m, int n, std::uint64_t seed,
                                            double shift_last = 0.0) {
    std::vector<std::vector<double>> chains(static_cast<std::size_t>(m));
    for (int c = 0; c < m; ++c) {
        frim::Rng rng = frim::Rng::derive(seed, {static_cast<std::uint64_t>(c)});
        chains[c].resize(static_cast<std::size_t>(n));
        const double shift = (c == m - 1) ? shift_last : 0.0;
        for (double& v : chains[c]) v = rng.normal() + shift;
    }
    return chains;
}

std::vector<std::vector<double>> ar1_chains(int m, int n, double rho, std::uint64_t seed) {
    std::vector<std::vector<double>> chains(static_cast<std::size_t>(m));
    const double innov_sd = std::sqrt(1.0 - rho * rho);
    for (int c = 0; c < m; ++c) {
        frim::Rng rng = frim::Rng::derive(seed, {static_cast<std::uint64_t>(c)});
        chains[c].resize(static_cast<std::size_t>(n));
        double x = rng.normal();
        for (double& v : chains[c]) {
            x = rho * x + innov_sd * rng.normal();
            v = x;
        }
    }
    return chains;
}

}  // namespace

TEST_CASE("well-mixed chains have rhat near one and full ESS") {
    const auto chains = iid_chains(4, 2000, 11);
    const double rhat = frim::split_rhat(chains);
    CHECK(rhat > 0.99);
    CHECK(rhat < 1.02);
    const double ess = frim::effective_sample_size(chains);
    CHECK(ess > 0.5 * 8000.0);
    CHECK(ess <= 8000.0);
}

TEST_CASE("a shifted chain inflates rhat far past the 1.1 alarm") {
    const auto chains = iid_chains(4, 2000, 12, /*shift_last=*/3.0);
    CHECK(frim::split_rhat(chains) > 1.5);
}

TEST_CASE("splitting exposes drift inside a single chain") {
    std::vector<std::vector<double>> chains(1);
    frim::Rng rng(13);
    chains[0].resize(2000);
    for (std::size_t i = 0; i < chains[0].size(); ++i)
        chains[0][i] = rng.normal() + 3.0 * static_cast<double>(i) / 2000.0;
    CHECK(frim::split_rhat(chains) > 1.1);
}

TEST_CASE("constant chains report rhat of exactly one") {
    std::vector<std::vector<double>> chains{{2.0, 2.0, 2.0, 2.0}, {2.0, 2.0, 2.0, 2.0}};
    CHECK(frim::split_rhat(chains) == doctest::Approx(1.0));
}

TEST_CASE("positively correlated chains lose effective samples") {
    // AR(1) with rho = 0.9 has asymptotic efficiency (1-rho)/(1+rho) ~ 0.053.
    const auto chains = ar1_chains(4, 5000, 0.9, 21);
    const double ratio = frim::effective_sample_size(chains) / 20000.0;
    CHECK(ratio > 0.02);
    CHECK(ratio < 0.12);
}

TEST_CASE("mildly correlated chains sit between the extremes") {
    // rho = 0.5: efficiency (1-rho)/(1+rho) = 1/3.
    const auto chains = ar1_chains(4, 5000, 0.5, 22);
    const double ratio = frim::effective_sample_size(chains) / 20000.0;
    CHECK(ratio > 0.2);
    CHECK(ratio < 0.5);
}

TEST_CASE("ESS is capped at the total number of draws") {
    // Antithetic alternation is superefficient for the mean; the estimator
    // deliberately reports no more samples than were drawn.
    std::vector<std::vector<double>> chains(2);
    frim::Rng rng(31);
    for (auto& c : chains) {
        c.resize(4000);
        for (std::size_t i = 0; i < c.size(); i += 2) {
            const double z = rng.normal();
            c[i] = z;
            c[i + 1] = -z;
        }
    }
    CHECK(frim::effective_sample_size(chains) == doctest::Approx(8000.0));
}

TEST_CASE("mcse shrinks with chain length and tracks sd/sqrt(ess)") {
    const auto small = iid_chains(4, 500, 41);
    const auto large = iid_chains(4, 8000, 42);
    const double mcse_small = frim::mcse_mean(small);
    const double mcse_large = frim::mcse_mean(large);
    CHECK(mcse_large < mcse_small);
    // For iid normal chains the mcse should be close to 1/sqrt(total).
    CHECK(mcse_large == doctest::Approx(1.0 / std::sqrt(32000.0)).epsilon(0.5));
}

TEST_CASE("diagnostics validate their input") {
    CHECK_THROWS_AS((void)frim::split_rhat({}), frim::InputError);
    CHECK_THROWS_AS((void)frim::split_rhat({{1.0, 2.0}}), frim::InputError);
    CHECK_THROWS_AS((void)frim::split_rhat({{1.0, 2.0, 3.0, 4.0}, {1.0, 2.0}}),
                    frim::InputError);
}
