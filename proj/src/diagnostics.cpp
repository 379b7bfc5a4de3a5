#include "frim/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "frim/common.hpp"
#include "frim/stats.hpp"

namespace frim {
namespace {

// Splits every chain in half (dropping one draw from odd lengths) so the
// comparison also detects within-chain drift.
std::vector<std::vector<double>> split_halves(const std::vector<std::vector<double>>& chains) {
    if (chains.empty()) throw InputError("diagnostics need at least one chain");
    const std::size_t len = chains.front().size();
    for (const auto& c : chains)
        if (c.size() != len) throw InputError("diagnostics need equal-length chains");
    if (len < 4) throw InputError("diagnostics need at least four draws per chain");
    const std::size_t half = len / 2;
    std::vector<std::vector<double>> out;
    out.reserve(2 * chains.size());
    for (const auto& c : chains) {
        out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        out.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(half),
                         c.begin() + static_cast<std::ptrdiff_t>(2 * half));
    }
    return out;
}

struct Moments {
    double within = 0.0;    // W: mean of sample variances
    double var_plus = 0.0;  // (n-1)/n W + B/n
    std::vector<double> means;
    std::size_t n = 0;
};

Moments pooled_moments(const std::vector<std::vector<double>>& split) {
    Moments mo;
    mo.n = split.front().size();
    for (const auto& c : split) {
        mo.means.push_back(mean(c));
        mo.within += variance(c);
    }
    mo.within /= static_cast<double>(split.size());
    const double b_over_n = split.size() > 1 ? variance(mo.means) : 0.0;
    const double n = static_cast<double>(mo.n);
    mo.var_plus = (n - 1.0) / n * mo.within + b_over_n;
    return mo;
}

}  // namespace

double split_rhat(const std::vector<std::vector<double>>& chains) {
    const auto split = split_halves(chains);
    const auto mo = pooled_moments(split);
    if (mo.within <= 0.0) return 1.0;
    return std::sqrt(mo.var_plus / mo.within);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
    const auto split = split_halves(chains);
    const auto mo = pooled_moments(split);
    const std::size_t m = split.size();
    const std::size_t n = mo.n;
    const double total = static_cast<double>(m * n);
    if (mo.var_plus <= 0.0) return total;

    // Pooled autocorrelations rho_t = 1 - (W - mean autocovariance_t)/var+.
    auto pooled_rho = [&](std::size_t t) {
        double acov = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i + t < n; ++i)
                s += (split[c][i] - mo.means[c]) * (split[c][i + t] - mo.means[c]);
            acov += s / static_cast<double>(n);
        }
        acov /= static_cast<double>(m);
        return 1.0 - (mo.within - acov) / mo.var_plus;
    };

    // Initial monotone positive sequence over lag pairs.
    double tau = -1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        const double rho_even = (2 * k == 0) ? 1.0 : pooled_rho(2 * k);
        const double rho_odd = pooled_rho(2 * k + 1);
        double pair = rho_even + rho_odd;
        if (pair <= 0.0) break;
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
    }
    tau = std::max(tau, 1.0 / std::log10(std::max(total, 10.0)));
    return std::min(total, total / tau);
}

double mcse_mean(const std::vector<std::vector<double>>& chains) {
    std::vector<double> pooled;
    for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
    const double ess = effective_sample_size(chains);
    return sd(pooled) / std::sqrt(ess);
}

}  // namespace frim
