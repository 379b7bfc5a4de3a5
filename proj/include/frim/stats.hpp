#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "frim/common.hpp"

namespace frim {

inline double mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

// Unbiased sample variance (n - 1 denominator).
inline double variance(const std::vector<double>& x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

inline double sd(const std::vector<double>& x) { return std::sqrt(variance(x)); }

// Linear-interpolation quantile (the "type 7" convention: h = (n-1)p, the
// estimate interpolates between order statistics floor(h) and floor(h)+1).
// Input must be sorted ascending.
inline double quantile_type7_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw InputError("quantile of an empty sample");
    if (p < 0.0 || p > 1.0) throw InputError("quantile probability outside [0, 1]");
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = static_cast<double>(n - 1) * p;
    const std::size_t k = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(k);
    if (frac == 0.0 || k + 1 >= n) return sorted[k];
    return sorted[k] + frac * (sorted[k + 1] - sorted[k]);
}

// Same estimator via partial selection; reorders `v`.  Used on hot paths
// where a full sort per quantile would dominate.
inline double quantile_type7_inplace(std::vector<double>& v, double p) {
    if (v.empty()) throw InputError("quantile of an empty sample");
    if (p < 0.0 || p > 1.0) throw InputError("quantile probability outside [0, 1]");
    const std::size_t n = v.size();
    if (n == 1) return v[0];
    const double h = static_cast<double>(n - 1) * p;
    const std::size_t k = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(k);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    const double lo = v[k];
    if (frac == 0.0 || k + 1 >= n) return lo;
    const double hi = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(k) + 1, v.end());
    return lo + frac * (hi - lo);
}

// Quadrature weights of the trapezoid rule on an arbitrary strictly
// increasing grid; sum(w) equals the grid range.
inline std::vector<double> trapezoid_weights(const std::vector<double>& grid) {
    const std::size_t m = grid.size();
    if (m < 2) throw InputError("trapezoid weights need at least two grid points");
    for (std::size_t i = 1; i < m; ++i)
        if (!(grid[i] > grid[i - 1]))
            throw InputError("trapezoid weights need a strictly increasing grid");
    std::vector<double> w(m);
    w[0] = 0.5 * (grid[1] - grid[0]);
    for (std::size_t i = 1; i + 1 < m; ++i) w[i] = 0.5 * (grid[i + 1] - grid[i - 1]);
    w[m - 1] = 0.5 * (grid[m - 1] - grid[m - 2]);
    return w;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double expit(double eta) {
    // Clamp so exp() cannot overflow; beyond +-36 the result is 0/1 to
    // double precision anyway.
    if (eta > 36.0) return 1.0;
    if (eta < -36.0) return 0.0;
    return 1.0 / (1.0 + std::exp(-eta));
}

struct KsResult {
    double statistic = 0.0;  // sup |F_n - F|
    double p_value = 1.0;
};

// One-sample Kolmogorov-Smirnov test of `sample` against the continuous CDF
// `cdf`, with the usual asymptotic p-value (accurate for n >= ~35).
template <typename Cdf>
KsResult ks_test(std::vector<double> sample, const Cdf& cdf) {
    if (sample.size() < 2) throw InputError("KS test needs at least two observations");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
    }
    const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        p += term;
        sign = -sign;
        if (std::abs(term) < 1e-12) break;
    }
    KsResult r;
    r.statistic = d;
    r.p_value = std::clamp(2.0 * p, 0.0, 1.0);
    return r;
}

}  // namespace frim
