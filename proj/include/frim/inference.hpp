#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "frim/mfpca.hpp"
#include "frim/sampler.hpp"

namespace frim {

// Pointwise interval coverage pooled over curves and grid points.  Band e is
// compared against row e of `truth` (columns aligned with the band's grid);
// intervals are closed, so a truth value equal to an endpoint counts as
// covered.  An optional mask (same shape) restricts pooling to entries with
// a nonzero flag.  NaN truth entries are always skipped.
struct CoverageReport {
    double mpcp = 0.0;
    std::size_t n_covered = 0;
    std::size_t n_total = 0;
    std::vector<double> per_curve;  // NaN where a curve contributed nothing
};

CoverageReport compute_mpcp(const std::vector<CredibleBands>& bands,
                            const Eigen::MatrixXd& truth,
                            const std::vector<std::vector<std::uint8_t>>& mask = {});

// Finite-sample coupling between the per-visit mean of the adjusted
// components and the visit-level eigenfunctions: with a balanced design,
// delta_j(s) = (1/I) sum_i [r_ij(s) - mean_j' r_ij'(s)] should shrink like
// 1/sqrt(I); gamma(j, k) = <delta_j, psi_k> projects it onto the estimated
// visit-level basis and `rms` aggregates the projections.
struct LeakageDiagnostic {
    Eigen::MatrixXd gamma;  // n_visit_positions x K2
    double rms = 0.0;
};

LeakageDiagnostic leakage_diagnostic(const AdjustedComponents& ac, const MfpcaResult& pca);

// ---------------------------------------------------------------------------
// Anomaly detection: compare a held-out visit's posterior-mean deviation
// curve against the credible band pooled over the same subject's remaining
// (training) visits.
// ---------------------------------------------------------------------------

struct AnomalyOptions {
    double alpha = 0.05;
    double min_duration = 0.0;  // flagged runs shorter than this are dropped
};

struct FlaggedInterval {
    double start = 0.0, end = 0.0;
};

struct VisitAnomalyResult {
    std::string subject_id, visit_id;
    std::vector<std::uint8_t> outside;      // per grid point
    double flagged_fraction = 0.0;          // before the duration filter
    std::vector<FlaggedInterval> intervals; // maximal runs >= min_duration
};

struct AnomalyReport {
    std::vector<VisitAnomalyResult> visits;
    double mean_flagged_fraction = 0.0;
};

// `test_visits` holds (subject_id, visit_id) pairs; each test visit needs at
// least one other visit of the same subject to train on.  Unknown labels are
// errors.
AnomalyReport detect_anomalies(const PosteriorDraws& draws,
                               const std::vector<std::pair<std::string, std::string>>& test_visits,
                               const AnomalyOptions& options = AnomalyOptions());

}  // namespace frim
