#include "frim/core_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace frim {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Splits one CSV line; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted)
        throw InputError("unterminated quoted field on line " + std::to_string(line_no));
    fields.push_back(trim(cur));
    return fields;
}

bool is_missing_token(const std::string& t) {
    if (t.empty()) return true;
    std::string u;
    for (char c : t) u += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return u == "NA" || u == "NAN" || u == "N/A" || u == "NULL";
}

double parse_double(const std::string& t, std::size_t line_no, const std::string& col) {
    double v = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw InputError("line " + std::to_string(line_no) + ", column '" + col +
                         "': cannot parse '" + t + "' as a number");
    if (!std::isfinite(v))
        throw InputError("line " + std::to_string(line_no) + ", column '" + col +
                         "': non-finite value");
    return v;
}

void quote_if_needed(std::ostream& out, const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        out << s;
        return;
    }
    out << '"';
    for (char c : s) {
        if (c == '"') out << '"';
        out << c;
    }
    out << '"';
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void FunctionalDataset::finalize() {
    if (rec_s.empty()) throw InputError("dataset has no records");
    if (visit_ids.size() != visit_subject.size() ||
        static_cast<Eigen::Index>(visit_ids.size()) != X.rows())
        throw InputError("dataset visit tables have inconsistent sizes");
    if (rec_visit.size() != rec_s.size() || rec_y.size() != rec_s.size())
        throw InputError("dataset record arrays have inconsistent sizes");
    if (static_cast<std::size_t>(X.cols()) != covariate_names.size())
        throw InputError("covariate names do not match the design matrix");
    for (Eigen::Index v = 0; v < X.rows(); ++v)
        if (X(v, 0) != 1.0)
            throw InputError("design matrix must carry an intercept column of ones");

    subject_visits.assign(n_subjects(), {});
    for (std::size_t v = 0; v < visit_subject.size(); ++v) {
        const int subj = visit_subject[v];
        if (subj < 0 || static_cast<std::size_t>(subj) >= n_subjects())
            throw InputError("visit refers to an unknown subject index");
        subject_visits[static_cast<std::size_t>(subj)].push_back(static_cast<int>(v));
    }

    s_min = std::numeric_limits<double>::infinity();
    s_max = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rec_s.size(); ++r) {
        if (rec_visit[r] >= visit_ids.size())
            throw InputError("record refers to an unknown visit index");
        if (!std::isfinite(rec_s[r]) || !std::isfinite(rec_y[r]))
            throw InputError("record has a non-finite location or outcome");
        if (family == Family::binomial && rec_y[r] != 0.0 && rec_y[r] != 1.0)
            throw InputError("binomial outcome must be 0 or 1 (record " +
                             std::to_string(r) + " has " + format_double(rec_y[r]) + ")");
        s_min = std::min(s_min, rec_s[r]);
        s_max = std::max(s_max, rec_s[r]);
    }
}

IngestResult ingest_long_csv(std::istream& in, Family family, const CsvSchema& schema) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty-input: no header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line, 1);

    std::unordered_map<std::string, std::size_t> col_of;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (col_of.count(header[c]))
            throw InputError("duplicate column '" + header[c] + "' in header");
        col_of[header[c]] = c;
    }
    auto require = [&](const std::string& name) {
        const auto it = col_of.find(name);
        if (it == col_of.end()) throw InputError("required column '" + name + "' not found");
        return it->second;
    };
    const std::size_t c_subject = require(schema.subject);
    const std::size_t c_visit = require(schema.visit);
    const std::size_t c_loc = require(schema.location);
    const std::size_t c_out = require(schema.outcome);

    std::vector<std::string> cov_names = schema.covariates;
    if (cov_names.empty()) {
        for (const auto& h : header)
            if (h != schema.subject && h != schema.visit && h != schema.location &&
                h != schema.outcome)
                cov_names.push_back(h);
    }
    std::vector<std::size_t> cov_cols;
    for (const auto& name : cov_names) cov_cols.push_back(require(name));

    IngestResult result;
    FunctionalDataset& d = result.dataset;
    d.family = family;
    d.covariate_names.push_back("(intercept)");
    d.covariate_names.insert(d.covariate_names.end(), cov_names.begin(), cov_names.end());
    const Eigen::Index p = static_cast<Eigen::Index>(cov_names.size()) + 1;

    std::unordered_map<std::string, int> subject_of;
    std::unordered_map<std::string, std::uint32_t> visit_of;  // key: subject \x1f visit
    std::vector<Eigen::RowVectorXd> x_rows;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line, line_no);
        if (fields.size() != header.size())
            throw InputError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " fields, found " +
                             std::to_string(fields.size()));

        if (is_missing_token(fields[c_out])) {
            ++result.dropped_missing_outcome;
            continue;
        }
        for (std::size_t c : {c_subject, c_visit}) {
            if (fields[c].empty())
                throw InputError("line " + std::to_string(line_no) + ": empty '" +
                                 header[c] + "' field");
        }
        if (is_missing_token(fields[c_loc]))
            throw InputError("line " + std::to_string(line_no) +
                             ": missing location is not allowed");

        const double s = parse_double(fields[c_loc], line_no, header[c_loc]);
        const double y = parse_double(fields[c_out], line_no, header[c_out]);
        if (family == Family::binomial && y != 0.0 && y != 1.0)
            throw InputError("line " + std::to_string(line_no) +
                             ": binomial outcome must be 0 or 1, found '" + fields[c_out] + "'");

        Eigen::RowVectorXd x(p);
        x(0) = 1.0;
        for (std::size_t k = 0; k < cov_cols.size(); ++k) {
            if (is_missing_token(fields[cov_cols[k]]))
                throw InputError("line " + std::to_string(line_no) +
                                 ": missing covariate '" + cov_names[k] + "'");
            x(static_cast<Eigen::Index>(k) + 1) =
                parse_double(fields[cov_cols[k]], line_no, cov_names[k]);
        }

        const std::string& subj_id = fields[c_subject];
        auto sit = subject_of.find(subj_id);
        if (sit == subject_of.end()) {
            sit = subject_of.emplace(subj_id, static_cast<int>(d.subject_ids.size())).first;
            d.subject_ids.push_back(subj_id);
        }
        const std::string vkey = subj_id + '\x1f' + fields[c_visit];
        auto vit = visit_of.find(vkey);
        if (vit == visit_of.end()) {
            vit = visit_of.emplace(vkey, static_cast<std::uint32_t>(d.visit_ids.size())).first;
            d.visit_ids.push_back(fields[c_visit]);
            d.visit_subject.push_back(sit->second);
            x_rows.push_back(x);
        } else if (x_rows[vit->second] != x) {
            throw InputError("line " + std::to_string(line_no) + ": covariates for subject '" +
                             subj_id + "', visit '" + fields[c_visit] +
                             "' differ from an earlier record of the same visit");
        }
        d.rec_visit.push_back(vit->second);
        d.rec_s.push_back(s);
        d.rec_y.push_back(y);
    }

    if (d.rec_s.empty())
        throw InputError("empty-input: no usable data rows" +
                         std::string(result.dropped_missing_outcome > 0
                                         ? " (all outcomes were missing)"
                                         : ""));

    d.X.resize(static_cast<Eigen::Index>(x_rows.size()), p);
    for (std::size_t v = 0; v < x_rows.size(); ++v)
        d.X.row(static_cast<Eigen::Index>(v)) = x_rows[v];
    d.finalize();
    return result;
}

IngestResult ingest_long_csv_file(const std::string& path, Family family,
                                  const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open input file '" + path + "'");
    return ingest_long_csv(in, family, schema);
}

void write_long_csv(const FunctionalDataset& dataset, std::ostream& out) {
    out << "subject,visit,s,y";
    for (Eigen::Index k = 1; k < dataset.X.cols(); ++k)
        out << ',' << dataset.covariate_names[static_cast<std::size_t>(k)];
    out << '\n';
    for (std::size_t r = 0; r < dataset.n_records(); ++r) {
        const std::uint32_t v = dataset.rec_visit[r];
        quote_if_needed(out, dataset.subject_ids[static_cast<std::size_t>(dataset.visit_subject[v])]);
        out << ',';
        quote_if_needed(out, dataset.visit_ids[v]);
        out << ',' << format_double(dataset.rec_s[r]) << ',' << format_double(dataset.rec_y[r]);
        for (Eigen::Index k = 1; k < dataset.X.cols(); ++k)
            out << ',' << format_double(dataset.X(static_cast<Eigen::Index>(v), k));
        out << '\n';
    }
}

void write_long_csv_file(const FunctionalDataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open output file '" + path + "'");
    write_long_csv(dataset, out);
}

BinLayout make_bins(double lo, double hi, const BinSpec& spec) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
        throw InputError("bin domain must satisfy lo < hi");
    const double range = hi - lo;

    std::size_t m = 0;
    double width = 0.0;
    switch (spec.kind) {
        case BinSpec::Kind::count: {
            const double raw = spec.value;
            if (!(raw >= 1.0) || raw != std::floor(raw))
                throw InputError("bin count must be a positive integer");
            m = static_cast<std::size_t>(raw);
            width = range / static_cast<double>(m);
            break;
        }
        case BinSpec::Kind::width_pct: {
            if (!(spec.value > 0.0) || !(spec.value <= 1.0))
                throw InputError("bin width fraction must lie in (0, 1]");
            width = spec.value * range;
            m = static_cast<std::size_t>(std::ceil(1.0 / spec.value - 1e-12));
            break;
        }
        case BinSpec::Kind::width: {
            if (!(spec.value > 0.0)) throw InputError("bin width must be positive");
            width = std::min(spec.value, range);
            m = static_cast<std::size_t>(std::ceil(range / spec.value - 1e-12));
            break;
        }
    }

    BinLayout layout;
    layout.lo = lo;
    layout.hi = hi;
    layout.width = width;
    layout.centers.resize(m);
    if (m == 1) {
        layout.centers[0] = lo + range / 2.0;
        layout.width = std::max(width, range);
    } else {
        // Equally spaced centers whose first/last bins touch the domain
        // edges; spacing <= width, so the bins jointly cover [lo, hi]
        // (they overlap whenever m * width > range).
        const double first = lo + width / 2.0;
        const double last = hi - width / 2.0;
        for (std::size_t i = 0; i < m; ++i)
            layout.centers[i] =
                first + (last - first) * static_cast<double>(i) / static_cast<double>(m - 1);
    }
    return layout;
}

std::size_t BinnedDataset::n_missing_cells() const {
    std::size_t n = 0;
    for (Eigen::Index v = 0; v < counts.rows(); ++v)
        for (Eigen::Index m = 0; m < counts.cols(); ++m)
            if (counts(v, m) == 0) ++n;
    return n;
}

BinnedDataset assign_bins(const FunctionalDataset& dataset, const BinLayout& layout) {
    const std::size_t m_bins = layout.n_bins();
    if (m_bins == 0) throw InputError("bin layout has no bins");
    if (dataset.s_min < layout.lo - 1e-9 * (layout.hi - layout.lo) ||
        dataset.s_max > layout.hi + 1e-9 * (layout.hi - layout.lo))
        throw InputError("bin layout does not cover the observed location range");

    BinnedDataset binned;
    binned.layout = layout;
    binned.bin_records.assign(m_bins, {});
    binned.counts = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(dataset.n_visits()),
                                          static_cast<Eigen::Index>(m_bins));

    const double half = layout.width / 2.0;
    const double spacing =
        m_bins > 1 ? layout.centers[1] - layout.centers[0] : layout.width;
    const double rescue = 1e-9 * std::max(1.0, layout.hi - layout.lo);

    for (std::size_t r = 0; r < dataset.n_records(); ++r) {
        const double s = dataset.rec_s[r];
        // Candidate window from arithmetic, widened by one on each side to
        // absorb floating-point slop, then checked against the exact
        // closed-interval membership rule.
        std::ptrdiff_t first = 0, last = static_cast<std::ptrdiff_t>(m_bins) - 1;
        if (m_bins > 1) {
            first = static_cast<std::ptrdiff_t>(
                        std::ceil((s - half - layout.centers[0]) / spacing)) -
                    1;
            last = static_cast<std::ptrdiff_t>(
                       std::floor((s + half - layout.centers[0]) / spacing)) +
                   1;
            first = std::max<std::ptrdiff_t>(first, 0);
            last = std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(m_bins) - 1);
        }
        bool assigned = false;
        for (std::ptrdiff_t m = first; m <= last; ++m) {
            if (layout.contains(static_cast<std::size_t>(m), s)) {
                binned.bin_records[static_cast<std::size_t>(m)].push_back(
                    static_cast<std::uint32_t>(r));
                binned.counts(static_cast<Eigen::Index>(dataset.rec_visit[r]),
                              static_cast<Eigen::Index>(m))++;
                assigned = true;
            }
        }
        if (!assigned) {
            // Nearest-bin rescue for locations a few ulps outside an edge.
            std::size_t best = 0;
            double best_dist = std::numeric_limits<double>::infinity();
            for (std::size_t m = 0; m < m_bins; ++m) {
                const double dist = std::abs(s - layout.centers[m]);
                if (dist < best_dist) {
                    best_dist = dist;
                    best = m;
                }
            }
            if (best_dist - half <= rescue) {
                binned.bin_records[best].push_back(static_cast<std::uint32_t>(r));
                binned.counts(static_cast<Eigen::Index>(dataset.rec_visit[r]),
                              static_cast<Eigen::Index>(best))++;
            } else {
                throw InputError("record at s = " + std::to_string(s) +
                                 " falls outside every bin");
            }
        }
    }

    for (std::size_t m = 0; m < m_bins; ++m)
        if (binned.bin_records[m].empty())
            throw InputError("bin " + std::to_string(m) + " (center " +
                             std::to_string(layout.centers[m]) +
                             ") caught no records; increase the bin width");
    return binned;
}

}  // namespace frim
