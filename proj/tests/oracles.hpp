#pragma once

// Independent reference implementations used only by tests: dense linear
// algebra with none of the structure the library exploits, so agreement is
// meaningful.  Everything here is O(dense) and meant for tiny instances.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

namespace testref {

// --- dense two-level Gaussian mixed model ---------------------------------
// y = X beta + Za a + Zb b + e with a ~ N(0, ga*s2), b ~ N(0, gb*s2),
// e ~ N(0, s2): ga and gb are ratios to the residual variance.

struct HendersonSolution {
    Eigen::VectorXd beta, a, b;
    double sigma2 = 0.0;  // profile REML estimate at (ga, gb)
};

// Henderson's mixed-model equations, solved as one dense augmented system.
inline HendersonSolution henderson_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Za,
                                         const Eigen::MatrixXd& Zb, const Eigen::VectorXd& y,
                                         double ga, double gb) {
    const Eigen::Index p = X.cols(), qa = Za.cols(), qb = Zb.cols();
    Eigen::MatrixXd C(p + qa + qb, p + qa + qb);
    C.block(0, 0, p, p) = X.transpose() * X;
    C.block(0, p, p, qa) = X.transpose() * Za;
    C.block(0, p + qa, p, qb) = X.transpose() * Zb;
    C.block(p, p, qa, qa) =
        Za.transpose() * Za + Eigen::MatrixXd::Identity(qa, qa) / ga;
    C.block(p, p + qa, qa, qb) = Za.transpose() * Zb;
    C.block(p + qa, p + qa, qb, qb) =
        Zb.transpose() * Zb + Eigen::MatrixXd::Identity(qb, qb) / gb;
    C.triangularView<Eigen::Lower>() = C.transpose();

    Eigen::VectorXd rhs(p + qa + qb);
    rhs.head(p) = X.transpose() * y;
    rhs.segment(p, qa) = Za.transpose() * y;
    rhs.tail(qb) = Zb.transpose() * y;

    const Eigen::VectorXd sol = C.ldlt().solve(rhs);
    HendersonSolution out;
    out.beta = sol.head(p);
    out.a = sol.segment(p, qa);
    out.b = sol.tail(qb);

    const Eigen::VectorXd resid = y - X * out.beta - Za * out.a - Zb * out.b;
    const double qform = resid.squaredNorm() + out.a.squaredNorm() / ga + out.b.squaredNorm() / gb;
    out.sigma2 = qform / static_cast<double>(y.size() - p);
    return out;
}

// REML profile deviance at variance ratios (ga, gb), computed with dense
// N x N matrices: (N - p) log(q_res) + log det W + log det(X' W^{-1} X),
// where W = I + ga Za Za' + gb Zb Zb'.
inline double dense_reml_deviance(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Za,
                                  const Eigen::MatrixXd& Zb, const Eigen::VectorXd& y,
                                  double ga, double gb) {
    const Eigen::Index n = y.size(), p = X.cols();
    Eigen::MatrixXd W = Eigen::MatrixXd::Identity(n, n);
    W += ga * (Za * Za.transpose());
    W += gb * (Zb * Zb.transpose());
    const Eigen::LLT<Eigen::MatrixXd> llt(W);
    const Eigen::MatrixXd Wi_X = llt.solve(X);
    const Eigen::VectorXd Wi_y = llt.solve(y);
    const Eigen::MatrixXd XtWiX = X.transpose() * Wi_X;
    const Eigen::VectorXd beta = XtWiX.ldlt().solve(X.transpose() * Wi_y);
    const double q_res = y.dot(Wi_y) - beta.dot(X.transpose() * Wi_y);

    double logdet_w = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) logdet_w += 2.0 * std::log(llt.matrixL()(i, i));
    const double logdet_xwx = std::log(XtWiX.determinant());
    return static_cast<double>(n - p) * std::log(q_res) + logdet_w + logdet_xwx;
}

// --- binomial joint mode ----------------------------------------------------
// Penalized Newton over the stacked vector (beta, a, b) for
// y_r ~ Bernoulli(expit(eta_r)), eta = X beta + Za a + Zb b,
// a ~ N(0, va I), b ~ N(0, vb I) with fixed absolute variances.

struct JointMode {
    Eigen::VectorXd beta, a, b;
};

inline JointMode binomial_joint_mode(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Za,
                                     const Eigen::MatrixXd& Zb, const Eigen::VectorXd& y,
                                     double va, double vb) {
    const Eigen::Index p = X.cols(), qa = Za.cols(), qb = Zb.cols(), n = y.size();
    Eigen::MatrixXd D(n, p + qa + qb);
    D << X, Za, Zb;
    Eigen::VectorXd prior_prec(p + qa + qb);
    prior_prec.head(p).setZero();
    prior_prec.segment(p, qa).setConstant(1.0 / va);
    prior_prec.tail(qb).setConstant(1.0 / vb);

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + qa + qb);
    for (int it = 0; it < 200; ++it) {
        const Eigen::VectorXd eta = D * theta;
        const Eigen::VectorXd mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
        const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
        const Eigen::VectorXd grad =
            D.transpose() * (y - mu) - prior_prec.asDiagonal() * theta;
        Eigen::MatrixXd H = D.transpose() * w.asDiagonal() * D;
        H += Eigen::MatrixXd(prior_prec.asDiagonal());
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        theta += step;
        if (step.lpNorm<Eigen::Infinity>() < 1e-12) break;
    }
    JointMode out;
    out.beta = theta.head(p);
    out.a = theta.segment(p, qa);
    out.b = theta.tail(qb);
    return out;
}

// --- exact Gaussian score posterior ----------------------------------------
// y_r = offset_r + sum_k phi(r,k) xi[i(r),k] + sum_k psi(r,k) zeta[v(r),k] + e
// with fixed diagonal prior variances: the posterior over the stacked vector
// (xi entity-major, then zeta entity-major) is Gaussian with dense precision.

struct ScorePosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

inline ScorePosterior dense_score_posterior(
    std::size_t n_subjects, const std::vector<int>& visit_subject,
    const std::vector<std::uint32_t>& rec_visit, const std::vector<double>& rec_y,
    const std::vector<double>& rec_offset, const Eigen::MatrixXd& phi_rec,
    const Eigen::MatrixXd& psi_rec, const Eigen::VectorXd& var1, const Eigen::VectorXd& var2,
    double sigma2) {
    const Eigen::Index k1 = phi_rec.cols(), k2 = psi_rec.cols();
    const Eigen::Index n_visits = static_cast<Eigen::Index>(visit_subject.size());
    const Eigen::Index dim = static_cast<Eigen::Index>(n_subjects) * k1 + n_visits * k2;
    const Eigen::Index zeta_base = static_cast<Eigen::Index>(n_subjects) * k1;

    Eigen::MatrixXd precision = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t i = 0; i < n_subjects; ++i)
        for (Eigen::Index k = 0; k < k1; ++k)
            precision(static_cast<Eigen::Index>(i) * k1 + k,
                      static_cast<Eigen::Index>(i) * k1 + k) = 1.0 / var1[k];
    for (Eigen::Index v = 0; v < n_visits; ++v)
        for (Eigen::Index k = 0; k < k2; ++k)
            precision(zeta_base + v * k2 + k, zeta_base + v * k2 + k) = 1.0 / var2[k];

    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd row = Eigen::VectorXd::Zero(dim);
    for (std::size_t r = 0; r < rec_y.size(); ++r) {
        row.setZero();
        const Eigen::Index v = static_cast<Eigen::Index>(rec_visit[r]);
        const Eigen::Index i = visit_subject[static_cast<std::size_t>(v)];
        for (Eigen::Index k = 0; k < k1; ++k)
            row[i * k1 + k] = phi_rec(static_cast<Eigen::Index>(r), k);
        for (Eigen::Index k = 0; k < k2; ++k)
            row[zeta_base + v * k2 + k] = psi_rec(static_cast<Eigen::Index>(r), k);
        precision += row * row.transpose() / sigma2;
        rhs += row * (rec_y[r] - rec_offset[r]) / sigma2;
    }
    ScorePosterior out;
    out.cov = precision.ldlt().solve(Eigen::MatrixXd::Identity(dim, dim));
    out.mean = out.cov * rhs;
    return out;
}

// --- quadrature -------------------------------------------------------------

inline std::vector<double> trapezoid_weights_ref(const std::vector<double>& grid) {
    std::vector<double> w(grid.size(), 0.0);
    for (std::size_t m = 0; m + 1 < grid.size(); ++m) {
        const double h = grid[m + 1] - grid[m];
        w[m] += h / 2.0;
        w[m + 1] += h / 2.0;
    }
    return w;
}

inline double trapz_inner(const std::vector<double>& grid, const Eigen::VectorXd& f,
                          const Eigen::VectorXd& g) {
    const std::vector<double> w = trapezoid_weights_ref(grid);
    double acc = 0.0;
    for (std::size_t m = 0; m < grid.size(); ++m)
        acc += w[m] * f[static_cast<Eigen::Index>(m)] * g[static_cast<Eigen::Index>(m)];
    return acc;
}

// Gram-Schmidt under the trapezoid inner product: columns of F become exactly
// orthonormal with respect to the discrete quadrature.
inline Eigen::MatrixXd orthonormalize(const std::vector<double>& grid, Eigen::MatrixXd F) {
    for (Eigen::Index k = 0; k < F.cols(); ++k) {
        for (Eigen::Index j = 0; j < k; ++j)
            F.col(k) -= trapz_inner(grid, F.col(j), F.col(k)) * F.col(j);
        F.col(k) /= std::sqrt(trapz_inner(grid, F.col(k), F.col(k)));
    }
    return F;
}

// --- quantiles --------------------------------------------------------------

// Type-7 quantile by full sort; the library's selection-based version must
// agree exactly.
inline double quantile7_reference(std::vector<double> x, double p) {
    std::sort(x.begin(), x.end());
    const double h = (static_cast<double>(x.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= x.size()) return x.back();
    return x[lo] + (h - std::floor(h)) * (x[lo + 1] - x[lo]);
}

}  // namespace testref
