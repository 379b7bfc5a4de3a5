#include "frim/polyagamma.hpp"

#include <cmath>

#include "frim/common.hpp"
#include "frim/stats.hpp"

namespace frim {
namespace {

// Truncation point splitting the proposal into the inverse-Gaussian piece
// (x <= t) and the exponential tail (x > t).
constexpr double kTrunc = 0.64;

// Terms of the alternating series for the J*(1, .) density.
double series_coef(int n, double x) {
    const double h = static_cast<double>(n) + 0.5;
    if (x > kTrunc)
        return M_PI * h * std::exp(-h * h * M_PI * M_PI * x / 2.0);
    return M_PI * h * std::pow(2.0 / (M_PI * x), 1.5) * std::exp(-2.0 * h * h / x);
}

// CDF at t of the inverse-Gaussian with mean 1/z and shape 1 (z >= 0; the
// z = 0 limit is the Levy distribution).
double igauss_cdf(double t, double z) {
    const double rt = 1.0 / std::sqrt(t);
    const double a = normal_cdf(rt * (t * z - 1.0));
    const double b = normal_cdf(-rt * (t * z + 1.0));
    // exp(2z) * b underflows harmlessly to 0 for large z because b decays
    // like exp(-2z - 1/(2t) - t z^2 / 2).
    return a + (b > 0.0 ? std::exp(2.0 * z + std::log(b)) : 0.0);
}

// Inverse-Gaussian(mean 1/z, shape 1) conditioned on (0, t].
double truncated_igauss(Rng& rng, double z, double t) {
    const double mu = z > 0.0 ? 1.0 / z : std::numeric_limits<double>::infinity();
    if (!(mu <= t)) {
        // Large-mean regime: rejection from the one-sided stable proposal.
        for (;;) {
            double e1, e2;
            do {
                e1 = rng.exponential();
                e2 = rng.exponential();
            } while (e1 * e1 > 2.0 * e2 / t);
            const double x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            if (rng.uniform() <= std::exp(-z * z * x / 2.0)) return x;
        }
    }
    // Small-mean regime: sample the untruncated law, retry until <= t.
    for (;;) {
        const double nu = rng.normal();
        const double y = nu * nu;
        double x = mu + 0.5 * mu * mu * y -
                   0.5 * mu * std::sqrt(4.0 * mu * y + mu * mu * y * y);
        if (rng.uniform() > mu / (mu + x)) x = mu * mu / x;
        if (x <= t && x > 0.0) return x;
    }
}

// J*(1, z) for z >= 0: density proportional to cosh(z) exp(-x z^2 / 2) times
// the Jacobi-theta series; PG(1, c) = J*(1, |c|/2) / 4.
double jstar_draw(Rng& rng, double z) {
    const double k = M_PI * M_PI / 8.0 + z * z / 2.0;
    const double p = (M_PI / (2.0 * k)) * std::exp(-k * kTrunc);
    const double q = 2.0 * std::exp(-z) * igauss_cdf(kTrunc, z);
    const double tail_prob = p / (p + q);

    for (int attempt = 0; attempt < 10000; ++attempt) {
        double x;
        if (rng.uniform() < tail_prob)
            x = kTrunc + rng.exponential() / k;
        else
            x = truncated_igauss(rng, z, kTrunc);

        // Squeeze via the alternating partial sums: odd partial sums bound
        // the density from below, even ones from above.
        double s = series_coef(0, x);
        const double y = rng.uniform() * s;
        for (int n = 1;; ++n) {
            if (n % 2 == 1) {
                s -= series_coef(n, x);
                if (y <= s) return x;
            } else {
                s += series_coef(n, x);
                if (y > s) break;
            }
        }
    }
    throw ConvergenceError("Polya-Gamma rejection sampler exhausted its attempt budget");
}

}  // namespace

double pg_draw(Rng& rng, double c) {
    return 0.25 * jstar_draw(rng, std::abs(c) / 2.0);
}

}  // namespace frim
