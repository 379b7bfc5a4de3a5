#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "frim/rng.hpp"
#include "frim/slice.hpp"
#include "frim/stats.hpp"

namespace {

// Thinned draws from a slice-sampling chain on `log_density`.
std::vector<double> slice_chain(double x0, int n, int thin, frim::Rng& rng,
                                const std::function<double(double)>& log_density,
                                double w = 1.0) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n));
    double x = x0;
    for (int i = 0; i < n * thin; ++i) {
        x = frim::slice_sample(x, log_density, rng, w);
        if ((i + 1) % thin == 0) out.push_back(x);
    }
    return out;
}

}  // namespace

TEST_CASE("slice sampler leaves a standard normal invariant") {
    frim::Rng rng(7);
    const auto draws = slice_chain(0.0, 8000, 5, rng,
                                   [](double x) { return -0.5 * x * x; }, 2.0);
    CHECK(std::abs(frim::mean(draws)) < 0.05);
    CHECK(frim::variance(draws) == doctest::Approx(1.0).epsilon(0.08));
    const auto ks = frim::ks_test(draws, [](double x) { return frim::normal_cdf(x); });
    CHECK(ks.p_value > 1e-4);
}

TEST_CASE("slice sampler matches a skewed target's moments") {
    // Gamma(3, 1) restricted to x > 0: mean 3, variance 3.
    frim::Rng rng(21);
    auto logd = [](double x) {
        if (x <= 0.0) return -1e300;
        return 2.0 * std::log(x) - x;
    };
    const auto draws = slice_chain(3.0, 8000, 5, rng, logd, 3.0);
    CHECK(frim::mean(draws) == doctest::Approx(3.0).epsilon(0.05));
    CHECK(frim::variance(draws) == doctest::Approx(3.0).epsilon(0.15));
}

TEST_CASE("slice sampler escapes a far-tail starting point") {
    frim::Rng rng(3);
    double x = 40.0;
    auto logd = [](double v) { return -0.5 * v * v; };
    for (int i = 0; i < 200; ++i) x = frim::slice_sample(x, logd, rng, 2.0);
    CHECK(std::abs(x) < 6.0);
}

TEST_CASE("slice sampler visits both modes of a mixture") {
    // Equal mixture of N(-3, 0.5^2) and N(3, 0.5^2); the bracket is wide
    // enough to hop between modes.
    frim::Rng rng(15);
    auto logd = [](double x) {
        const double a = -0.5 * (x + 3.0) * (x + 3.0) / 0.25;
        const double b = -0.5 * (x - 3.0) * (x - 3.0) / 0.25;
        const double m = std::max(a, b);
        return m + std::log(std::exp(a - m) + std::exp(b - m));
    };
    int low = 0, high = 0;
    double x = 0.0;
    for (int i = 0; i < 4000; ++i) {
        x = frim::slice_sample(x, logd, rng, 8.0);
        (x < 0.0 ? low : high) += 1;
    }
    CHECK(low > 800);
    CHECK(high > 800);
}

TEST_CASE("bracket width does not change the stationary distribution") {
    // Same target, wildly different w; both chains should agree on moments.
    frim::Rng rng_a(31), rng_b(32);
    auto logd = [](double x) { return -0.5 * (x - 1.0) * (x - 1.0) / 4.0; };
    const auto narrow = slice_chain(1.0, 6000, 4, rng_a, logd, 0.05);
    const auto wide = slice_chain(1.0, 6000, 4, rng_b, logd, 50.0);
    CHECK(frim::mean(narrow) == doctest::Approx(1.0).epsilon(0.12));
    CHECK(frim::mean(wide) == doctest::Approx(1.0).epsilon(0.12));
    CHECK(frim::variance(narrow) == doctest::Approx(4.0).epsilon(0.15));
    CHECK(frim::variance(wide) == doctest::Approx(4.0).epsilon(0.15));
}
