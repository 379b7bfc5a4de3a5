#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "frim/common.hpp"

namespace frim {

// Long-format functional data: records (subject, visit, location s, outcome
// y) plus visit-level covariates.  Covariates are constant within a
// (subject, visit) pair — that is a model assumption, and ingest enforces it.
//
// Storage is struct-of-arrays: visits are indexed 0..n_visits()-1 in order of
// first appearance, records carry a visit index, and X holds one covariate
// row per visit (leading intercept column included).
struct FunctionalDataset {
    Family family = Family::gaussian;

    std::vector<std::string> subject_ids;  // one per subject
    std::vector<std::string> visit_ids;    // one per visit
    std::vector<int> visit_subject;        // subject index of each visit
    Eigen::MatrixXd X;                     // n_visits x p, X(.,0) == 1
    std::vector<std::string> covariate_names;  // size p, [0] == "(intercept)"

    std::vector<std::uint32_t> rec_visit;  // record -> visit index
    std::vector<double> rec_s;             // functional location
    std::vector<double> rec_y;             // outcome

    // Observed location range; set by finalize().
    double s_min = 0.0;
    double s_max = 0.0;

    // Derived index, rebuilt by finalize(): visits grouped by subject.
    std::vector<std::vector<int>> subject_visits;

    std::size_t n_subjects() const { return subject_ids.size(); }
    std::size_t n_visits() const { return visit_ids.size(); }
    std::size_t n_records() const { return rec_s.size(); }
    Eigen::Index n_covariates() const { return X.cols(); }

    // Recomputes derived members and validates the structural invariants
    // (index ranges, binomial outcomes in {0,1}, non-empty records).
    void finalize();
};

// Column mapping for long-format CSV files.  An empty `covariates` list
// means "every column not otherwise claimed, in file order".
struct CsvSchema {
    std::string subject = "subject";
    std::string visit = "visit";
    std::string location = "s";
    std::string outcome = "y";
    std::vector<std::string> covariates;
};

struct IngestResult {
    FunctionalDataset dataset;
    std::size_t dropped_missing_outcome = 0;
};

IngestResult ingest_long_csv(std::istream& in, Family family,
                             const CsvSchema& schema = CsvSchema());
IngestResult ingest_long_csv_file(const std::string& path, Family family,
                                  const CsvSchema& schema = CsvSchema());

// Inverse of ingest: one record per row, full double precision, so that
// ingest(write(d)) reproduces d exactly.
void write_long_csv(const FunctionalDataset& dataset, std::ostream& out);
void write_long_csv_file(const FunctionalDataset& dataset, const std::string& path);

// A family of M congruent bins with centers c_m on [lo, hi].  Bin m covers
// the closed interval [c_m - width/2, c_m + width/2]; a location on a shared
// edge belongs to both neighbours.  Centers are equally spaced and the bins
// jointly cover [lo, hi].
struct BinLayout {
    double lo = 0.0;
    double hi = 1.0;
    double width = 0.0;
    std::vector<double> centers;

    std::size_t n_bins() const { return centers.size(); }
    bool contains(std::size_t m, double s) const {
        return std::abs(s - centers[m]) <= width / 2.0;
    }
};

// How to choose the bins: an exact count, a width as a fraction of the
// domain range, or an absolute width.
struct BinSpec {
    enum class Kind { count, width_pct, width } kind = Kind::width_pct;
    double value = 0.05;

    static BinSpec count(int m) { return {Kind::count, static_cast<double>(m)}; }
    static BinSpec width_pct(double w) { return {Kind::width_pct, w}; }
    static BinSpec width(double d) { return {Kind::width, d}; }
};

BinLayout make_bins(double lo, double hi, const BinSpec& spec);

// Records grouped by bin, with per-(visit, bin) counts.  A bin that catches
// no records at all is an error (the width is too small for the design); a
// (visit, bin) cell with no records is ordinary missingness and is exposed
// through counts() == 0.
struct BinnedDataset {
    BinLayout layout;
    std::vector<std::vector<std::uint32_t>> bin_records;  // per bin: record indices
    Eigen::MatrixXi counts;                               // n_visits x M

    std::size_t n_bins() const { return layout.n_bins(); }
    std::size_t n_missing_cells() const;
};

BinnedDataset assign_bins(const FunctionalDataset& dataset, const BinLayout& layout);

}  // namespace frim
