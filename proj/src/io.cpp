#include "frim/io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <type_traits>
#include <vector>

#include "frim/common.hpp"

namespace frim {
namespace {

constexpr char kMagic[8] = {'F', 'R', 'I', 'M', 'D', 'R', 'W', '1'};

// --- little-endian scalar and bulk encoding -------------------------------

template <class T>
void put(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(bytes), std::end(bytes));
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    is.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!is) throw InputError("draws file is truncated");
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(std::begin(bytes), std::end(bytes));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

void put_doubles(std::ostream& os, const double* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) put(os, data[i]);
    }
}

void get_doubles(std::istream& is, double* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw InputError("draws file is truncated");
    } else {
        for (std::size_t i = 0; i < n; ++i) data[i] = get<double>(is);
    }
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    if (n > (1u << 20)) throw InputError("draws file is corrupt (oversized string)");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw InputError("draws file is truncated");
    return s;
}

// Matrices travel row-major regardless of Eigen's in-memory layout.
void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp = m;
    put_doubles(os, tmp.data(), static_cast<std::size_t>(tmp.size()));
}

Eigen::MatrixXd get_matrix(std::istream& is) {
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    if (rows > (1u << 26) || cols > (1u << 26))
        throw InputError("draws file is corrupt (oversized matrix)");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp(
        static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    get_doubles(is, tmp.data(), static_cast<std::size_t>(tmp.size()));
    return tmp;
}

// --- CSV helpers -----------------------------------------------------------

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::ofstream open_out(const std::string& path, std::ios_base::openmode mode = std::ios_base::out) {
    std::ofstream os(path, mode);
    if (!os) throw InputError("cannot open '" + path + "' for writing");
    return os;
}

}  // namespace

void write_draws_binary(const PosteriorDraws& draws, const std::string& path) {
    std::ofstream os = open_out(path, std::ios_base::binary);
    os.write(kMagic, sizeof(kMagic));
    put<std::uint8_t>(os, draws.family == Family::gaussian ? 0 : 1);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(draws.chains));
    put<std::uint64_t>(os, draws.draws_per_chain);
    put<std::uint64_t>(os, draws.n_subjects);
    put<std::uint64_t>(os, draws.n_visits);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(draws.k1));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(draws.k2));

    for (const auto& id : draws.subject_ids) put_string(os, id);
    for (const auto& id : draws.visit_ids) put_string(os, id);
    for (const int s : draws.visit_subject) put<std::int32_t>(os, s);

    put<std::uint64_t>(os, draws.grid.size());
    put_doubles(os, draws.grid.data(), draws.grid.size());
    put_matrix(os, draws.phi_grid);
    put_matrix(os, draws.psi_grid);

    for (int c = 0; c < draws.chains; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        put_matrix(os, draws.xi[ci]);
        put_matrix(os, draws.zeta[ci]);
        put_matrix(os, draws.var_subject[ci]);
        put_matrix(os, draws.var_visit[ci]);
        if (draws.family == Family::gaussian) {
            put<std::uint64_t>(os, static_cast<std::uint64_t>(draws.sigma2[ci].size()));
            put_doubles(os, draws.sigma2[ci].data(), static_cast<std::size_t>(draws.sigma2[ci].size()));
        }
    }

    put<std::uint64_t>(os, draws.diagnostics.size());
    for (const auto& d : draws.diagnostics) {
        put_string(os, d.name);
        put(os, d.rhat);
        put(os, d.ess);
    }
    put(os, draws.max_variance_rhat);
    put<std::uint64_t>(os, draws.warnings.size());
    for (const auto& w : draws.warnings) put_string(os, w);

    if (!os) throw InputError("failed while writing '" + path + "'");
}

PosteriorDraws read_draws_binary(const std::string& path) {
    std::ifstream is(path, std::ios_base::binary);
    if (!is) throw InputError("cannot open '" + path + "'");
    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw InputError("'" + path + "' is not a posterior-draws file");

    PosteriorDraws draws;
    draws.family = get<std::uint8_t>(is) == 0 ? Family::gaussian : Family::binomial;
    draws.chains = static_cast<int>(get<std::uint32_t>(is));
    draws.draws_per_chain = get<std::uint64_t>(is);
    draws.n_subjects = get<std::uint64_t>(is);
    draws.n_visits = get<std::uint64_t>(is);
    draws.k1 = static_cast<int>(get<std::uint32_t>(is));
    draws.k2 = static_cast<int>(get<std::uint32_t>(is));
    if (draws.chains < 0 || draws.chains > (1 << 16) || draws.n_subjects > (1u << 26) ||
        draws.n_visits > (1u << 26))
        throw InputError("'" + path + "' is corrupt (implausible header)");

    draws.subject_ids.resize(draws.n_subjects);
    for (auto& id : draws.subject_ids) id = get_string(is);
    draws.visit_ids.resize(draws.n_visits);
    for (auto& id : draws.visit_ids) id = get_string(is);
    draws.visit_subject.resize(draws.n_visits);
    for (auto& s : draws.visit_subject) s = static_cast<int>(get<std::int32_t>(is));

    draws.grid.resize(get<std::uint64_t>(is));
    get_doubles(is, draws.grid.data(), draws.grid.size());
    draws.phi_grid = get_matrix(is);
    draws.psi_grid = get_matrix(is);

    for (int c = 0; c < draws.chains; ++c) {
        draws.xi.push_back(get_matrix(is));
        draws.zeta.push_back(get_matrix(is));
        draws.var_subject.push_back(get_matrix(is));
        draws.var_visit.push_back(get_matrix(is));
        if (draws.family == Family::gaussian) {
            Eigen::VectorXd s2(static_cast<Eigen::Index>(get<std::uint64_t>(is)));
            get_doubles(is, s2.data(), static_cast<std::size_t>(s2.size()));
            draws.sigma2.push_back(std::move(s2));
        }
    }

    draws.diagnostics.resize(get<std::uint64_t>(is));
    for (auto& d : draws.diagnostics) {
        d.name = get_string(is);
        d.rhat = get<double>(is);
        d.ess = get<double>(is);
    }
    draws.max_variance_rhat = get<double>(is);
    draws.warnings.resize(get<std::uint64_t>(is));
    for (auto& w : draws.warnings) w = get_string(is);
    return draws;
}

void write_draws_csv(const PosteriorDraws& draws, const std::string& path,
                     const std::string& block) {
    const bool scores = block == "scores" || block == "all";
    const bool variances = block == "variances" || block == "all";
    if (!scores && !variances)
        throw InputError("unknown draws block '" + block + "' (expected scores, variances, or all)");

    std::ofstream os = open_out(path);
    os << "chain,draw,parameter,value\n";
    for (int c = 0; c < draws.chains; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        for (std::size_t d = 0; d < draws.draws_per_chain; ++d) {
            const Eigen::Index di = static_cast<Eigen::Index>(d);
            const std::string prefix = std::to_string(c + 1) + "," + std::to_string(d + 1) + ",";
            if (scores) {
                for (std::size_t i = 0; i < draws.n_subjects; ++i)
                    for (int k = 0; k < draws.k1; ++k)
                        os << prefix
                           << csv_quote("xi[" + draws.subject_ids[i] + "][" + std::to_string(k + 1) + "]")
                           << ',' << fmt(draws.xi[ci](di, static_cast<Eigen::Index>(i) * draws.k1 + k))
                           << '\n';
                for (std::size_t v = 0; v < draws.n_visits; ++v)
                    for (int k = 0; k < draws.k2; ++k)
                        os << prefix
                           << csv_quote("zeta[" + draws.subject_ids[static_cast<std::size_t>(
                                                      draws.visit_subject[v])] +
                                        "][" + draws.visit_ids[v] + "][" + std::to_string(k + 1) + "]")
                           << ',' << fmt(draws.zeta[ci](di, static_cast<Eigen::Index>(v) * draws.k2 + k))
                           << '\n';
            }
            if (variances) {
                for (int k = 0; k < draws.k1; ++k)
                    os << prefix << "var_subject[" << k + 1 << "]," << fmt(draws.var_subject[ci](di, k))
                       << '\n';
                for (int k = 0; k < draws.k2; ++k)
                    os << prefix << "var_visit[" << k + 1 << "]," << fmt(draws.var_visit[ci](di, k))
                       << '\n';
                if (draws.family == Family::gaussian)
                    os << prefix << "sigma2," << fmt(draws.sigma2[ci][di]) << '\n';
            }
        }
    }
    if (!os) throw InputError("failed while writing '" + path + "'");
}

void write_bands_csv(const std::vector<CredibleBands>& bands, const std::string& path) {
    std::ofstream os = open_out(path);
    os << "subject,visit,s,mean,lower,upper\n";
    for (const CredibleBands& band : bands)
        for (std::size_t l = 0; l < band.grid.size(); ++l)
            os << csv_quote(band.subject_id) << ',' << csv_quote(band.visit_id) << ','
               << fmt(band.grid[l]) << ',' << fmt(band.mean[l]) << ',' << fmt(band.lower[l]) << ','
               << fmt(band.upper[l]) << '\n';
    if (!os) throw InputError("failed while writing '" + path + "'");
}

void write_beta_csv(const FunctionalCoefficients& coefs, const std::vector<double>& grid,
                    const std::string& path) {
    std::ofstream os = open_out(path);
    os << "s";
    for (const auto& name : coefs.names) os << ',' << csv_quote(name);
    os << '\n';
    for (const double s : grid) {
        const Eigen::VectorXd row = coefs.evaluate(s);
        os << fmt(s);
        for (Eigen::Index j = 0; j < row.size(); ++j) os << ',' << fmt(row[j]);
        os << '\n';
    }
    if (!os) throw InputError("failed while writing '" + path + "'");
}

}  // namespace frim
