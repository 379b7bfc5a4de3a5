// frim: prediction inference for multilevel functional random effects.
//
// Subcommands:
//   fit       run the full pipeline on a long-format CSV and write artifacts
//   simulate  generate a synthetic multilevel functional dataset
//   coverage  repeated simulate->fit->band study reporting interval coverage
//   detect    flag test visits whose deviation curve leaves the band of the
//             same subject's training visits
//   export    convert a posterior-draws file to CSV tables
//
// A JSON config file (--config) overrides flags, which override defaults.
// Exit codes: 0 ok, 1 internal error, 2 input or config error, 3 convergence
// failure budget exceeded.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "frim/common.hpp"
#include "frim/core_data.hpp"
#include "frim/inference.hpp"
#include "frim/io.hpp"
#include "frim/pipeline.hpp"
#include "frim/simgen.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace frim;

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

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

// ---------------------------------------------------------------------------
// Config-file overlay: a flat JSON object whose keys mirror the long flag
// names.  Values present in the file override whatever the flags set.
// ---------------------------------------------------------------------------

class ConfigOverlay {
public:
    ConfigOverlay() = default;

    explicit ConfigOverlay(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InputError("cannot open config file '" + path + "'");
        try {
            in >> values_;
        } catch (const json::exception& e) {
            throw InputError("config file '" + path + "': " + e.what());
        }
        if (!values_.is_object()) throw InputError("config file '" + path + "' must hold a JSON object");
    }

    template <class T>
    void take(const std::string& key, T& into) {
        if (!values_.contains(key)) return;
        try {
            into = values_.at(key).get<T>();
        } catch (const json::exception&) {
            throw InputError("config key '" + key + "' has the wrong type");
        }
        used_.insert(key);
    }

    bool has(const std::string& key) const { return values_.contains(key); }

    // Every key must have been consumed by some take(); typos are errors.
    void finish() const {
        for (const auto& [key, value] : values_.items())
            if (used_.count(key) == 0) throw InputError("unknown config key '" + key + "'");
    }

private:
    json values_ = json::object();
    std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Shared option blocks
// ---------------------------------------------------------------------------

struct CommonOptions {
    std::string config_path;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out_dir = ".";
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file; its keys override flags");
    cmd->add_option("--seed", opts.seed, "master seed for all randomness");
    cmd->add_option("--workers", opts.workers, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", opts.out_dir, "output directory (created if needed)");
}

void overlay_common(ConfigOverlay& cfg, CommonOptions& opts) {
    cfg.take("seed", opts.seed);
    cfg.take("workers", opts.workers);
    cfg.take("out", opts.out_dir);
}

struct BinOptions {
    int bins = 0;
    double bin_width = 0.0;
    double bin_width_pct = 0.0;
};

void add_bin_options(CLI::App* cmd, BinOptions& opts) {
    auto* m = cmd->add_option("--bins", opts.bins, "exact bin count")->check(CLI::PositiveNumber);
    auto* d = cmd->add_option("--bin-width", opts.bin_width, "absolute bin width")
                  ->check(CLI::PositiveNumber);
    auto* w = cmd->add_option("--bin-width-pct", opts.bin_width_pct,
                              "bin width as a fraction of the domain (default 0.05)")
                  ->check(CLI::Range(1e-12, 1.0));
    m->excludes(d)->excludes(w);
    d->excludes(m)->excludes(w);
    w->excludes(m)->excludes(d);
}

void overlay_bin_options(ConfigOverlay& cfg, BinOptions& opts) {
    const int before = cfg.has("bins") + cfg.has("bin-width") + cfg.has("bin-width-pct");
    if (before > 1)
        throw InputError("config sets more than one of bins / bin-width / bin-width-pct");
    if (before == 1) opts = BinOptions{};  // the config choice replaces any flag choice
    cfg.take("bins", opts.bins);
    cfg.take("bin-width", opts.bin_width);
    cfg.take("bin-width-pct", opts.bin_width_pct);
}

BinSpec resolve_bin_spec(const BinOptions& opts) {
    const int given = (opts.bins > 0) + (opts.bin_width > 0.0) + (opts.bin_width_pct > 0.0);
    if (given > 1) throw InputError("give only one of --bins / --bin-width / --bin-width-pct");
    if (opts.bins > 0) return BinSpec::count(opts.bins);
    if (opts.bin_width > 0.0) return BinSpec::width(opts.bin_width);
    if (opts.bin_width_pct > 0.0) return BinSpec::width_pct(opts.bin_width_pct);
    return BinSpec();  // default: 5% of the domain
}

struct ModelOptions {
    std::string family = "gaussian";
    double pve = 0.95;
    int kmax = 10;
    int chains = 4;
    int warmup = 1000;
    int draws = 2000;
    std::string missing_policy = "drop";
};

void add_model_options(CLI::App* cmd, ModelOptions& opts, bool with_policy = true) {
    cmd->add_option("--family", opts.family, "outcome family")
        ->check(CLI::IsMember({"gaussian", "binomial"}));
    cmd->add_option("--pve", opts.pve, "proportion of variance explained for truncation")
        ->check(CLI::Range(1e-6, 1.0));
    cmd->add_option("--kmax", opts.kmax, "maximum components per level")->check(CLI::PositiveNumber);
    cmd->add_option("--chains", opts.chains, "MCMC chains")->check(CLI::PositiveNumber);
    cmd->add_option("--warmup", opts.warmup, "warmup iterations per chain")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--draws", opts.draws, "kept draws per chain")->check(CLI::PositiveNumber);
    if (with_policy)
        cmd->add_option("--missing-policy", opts.missing_policy,
                        "covariance estimation under missing cells")
            ->check(CLI::IsMember({"drop", "pairwise"}));
}

void overlay_model_options(ConfigOverlay& cfg, ModelOptions& opts) {
    cfg.take("family", opts.family);
    cfg.take("pve", opts.pve);
    cfg.take("kmax", opts.kmax);
    cfg.take("chains", opts.chains);
    cfg.take("warmup", opts.warmup);
    cfg.take("draws", opts.draws);
    cfg.take("missing-policy", opts.missing_policy);
}

Family resolve_family(const std::string& name) {
    if (name == "gaussian") return Family::gaussian;
    if (name == "binomial") return Family::binomial;
    throw InputError("unknown family '" + name + "'");
}

MissingPolicy resolve_policy(const std::string& name) {
    if (name == "drop") return MissingPolicy::drop_incomplete_visits;
    if (name == "pairwise") return MissingPolicy::pairwise_complete;
    throw InputError("unknown missing policy '" + name + "'");
}

PipelineSettings resolve_pipeline(const CommonOptions& common, const BinOptions& bins,
                                  const ModelOptions& model, const std::string& domain) {
    PipelineSettings settings;
    settings.bins = resolve_bin_spec(bins);
    settings.pca.pve = model.pve;
    settings.pca.k_max = model.kmax;
    settings.pca.policy = resolve_policy(model.missing_policy);
    settings.sampler.chains = model.chains;
    settings.sampler.warmup = model.warmup;
    settings.sampler.draws = model.draws;
    settings.sampler.seed = common.seed;
    settings.workers = common.workers;
    if (!domain.empty()) {
        const auto colon = domain.find(':');
        if (colon == std::string::npos)
            throw InputError("--domain expects LO:HI, got '" + domain + "'");
        try {
            settings.domain_lo = std::stod(domain.substr(0, colon));
            settings.domain_hi = std::stod(domain.substr(colon + 1));
        } catch (const std::exception&) {
            throw InputError("--domain expects LO:HI, got '" + domain + "'");
        }
        if (!(settings.domain_lo < settings.domain_hi))
            throw InputError("--domain requires LO < HI");
        settings.has_domain = true;
    }
    return settings;
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

fs::path prepare_out_dir(const std::string& out_dir) {
    fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory '" + out_dir + "': " + ec.message());
    return dir;
}

void write_json_file(const json& j, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open '" + path.string() + "' for writing");
    os << j.dump(2) << "\n";
    if (!os) throw InputError("failed while writing '" + path.string() + "'");
}

void write_eigen_csv(const MfpcaResult& pca, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open '" + path.string() + "' for writing");
    os << "s";
    for (int k = 0; k < pca.k1; ++k) os << ",phi" << k + 1;
    for (int k = 0; k < pca.k2; ++k) os << ",psi" << k + 1;
    os << "\n";
    for (std::size_t m = 0; m < pca.grid.size(); ++m) {
        os << fmt(pca.grid[m]);
        for (int k = 0; k < pca.k1; ++k) os << ',' << fmt(pca.phi(static_cast<Eigen::Index>(m), k));
        for (int k = 0; k < pca.k2; ++k) os << ',' << fmt(pca.psi(static_cast<Eigen::Index>(m), k));
        os << "\n";
    }
    if (!os) throw InputError("failed while writing '" + path.string() + "'");
}

json eigen_summary_json(const MfpcaResult& pca) {
    json j;
    j["k1"] = pca.k1;
    j["k2"] = pca.k2;
    j["pve1"] = pca.pve1;
    j["pve2"] = pca.pve2;
    j["lambda1"] = std::vector<double>(pca.lambda1.data(), pca.lambda1.data() + pca.lambda1.size());
    j["lambda2"] = std::vector<double>(pca.lambda2.data(), pca.lambda2.data() + pca.lambda2.size());
    j["sigma2_noise"] = pca.sigma2_noise;
    return j;
}

json diagnostics_json(const PosteriorDraws& draws) {
    json params = json::array();
    for (const auto& d : draws.diagnostics)
        params.push_back({{"name", d.name}, {"rhat", d.rhat}, {"ess", d.ess}});
    json j;
    j["chains"] = draws.chains;
    j["draws_per_chain"] = draws.draws_per_chain;
    j["max_variance_rhat"] = draws.max_variance_rhat;
    j["params"] = std::move(params);
    j["warnings"] = draws.warnings;
    return j;
}

json timings_json(const std::vector<StageTiming>& timings) {
    json j = json::array();
    for (const auto& t : timings) j.push_back({{"name", t.name}, {"seconds", t.seconds}});
    return j;
}

std::vector<double> linear_grid(double lo, double hi, int n) {
    std::vector<double> grid(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        grid[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    return grid;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitOptions {
    CommonOptions common;
    BinOptions bins;
    ModelOptions model;
    std::string input;
    std::string domain;
    std::string col_subject = "subject", col_visit = "visit", col_location = "s",
                col_outcome = "y";
    std::vector<std::string> covariates;
    int beta_grid = 101;
    int band_grid = 0;  // 0 = bin centers
};

json fit_config_json(const FitOptions& o) {
    json j;
    j["input"] = o.input;
    j["seed"] = o.common.seed;
    j["workers"] = o.common.workers;
    j["out"] = o.common.out_dir;
    j["family"] = o.model.family;
    if (o.bins.bins > 0) j["bins"] = o.bins.bins;
    if (o.bins.bin_width > 0) j["bin-width"] = o.bins.bin_width;
    if (o.bins.bin_width_pct > 0) j["bin-width-pct"] = o.bins.bin_width_pct;
    j["pve"] = o.model.pve;
    j["kmax"] = o.model.kmax;
    j["chains"] = o.model.chains;
    j["warmup"] = o.model.warmup;
    j["draws"] = o.model.draws;
    j["missing-policy"] = o.model.missing_policy;
    if (!o.domain.empty()) j["domain"] = o.domain;
    j["col-subject"] = o.col_subject;
    j["col-visit"] = o.col_visit;
    j["col-location"] = o.col_location;
    j["col-outcome"] = o.col_outcome;
    if (!o.covariates.empty()) j["covariates"] = o.covariates;
    j["beta-grid"] = o.beta_grid;
    j["band-grid"] = o.band_grid;
    return j;
}

int cmd_fit(FitOptions opts) {
    if (!opts.common.config_path.empty()) {
        ConfigOverlay cfg(opts.common.config_path);
        overlay_common(cfg, opts.common);
        overlay_bin_options(cfg, opts.bins);
        overlay_model_options(cfg, opts.model);
        cfg.take("input", opts.input);
        cfg.take("domain", opts.domain);
        cfg.take("col-subject", opts.col_subject);
        cfg.take("col-visit", opts.col_visit);
        cfg.take("col-location", opts.col_location);
        cfg.take("col-outcome", opts.col_outcome);
        cfg.take("covariates", opts.covariates);
        cfg.take("beta-grid", opts.beta_grid);
        cfg.take("band-grid", opts.band_grid);
        cfg.finish();
    }
    if (opts.input.empty()) throw InputError("fit: no input file given");
    if (opts.beta_grid < 2) throw InputError("--beta-grid needs at least 2 points");

    const fs::path out = prepare_out_dir(opts.common.out_dir);
    const auto wall_start = Clock::now();
    std::vector<StageTiming> timings;
    json manifest;
    manifest["tool"] = "frim";
    manifest["version"] = kVersion;
    manifest["command"] = "fit";
    manifest["config"] = fit_config_json(opts);

    std::string stage = "ingest";
    try {
        auto stage_start = Clock::now();
        CsvSchema schema;
        schema.subject = opts.col_subject;
        schema.visit = opts.col_visit;
        schema.location = opts.col_location;
        schema.outcome = opts.col_outcome;
        schema.covariates = opts.covariates;
        const IngestResult ingest =
            ingest_long_csv_file(opts.input, resolve_family(opts.model.family), schema);
        timings.push_back(
            {"ingest", std::chrono::duration<double>(Clock::now() - stage_start).count()});

        stage = "fit";
        const PipelineSettings settings =
            resolve_pipeline(opts.common, opts.bins, opts.model, opts.domain);
        FitResult result = fit_frim(ingest.dataset, settings);
        timings.insert(timings.end(), result.timings.begin(), result.timings.end());

        stage = "outputs";
        stage_start = Clock::now();
        std::vector<std::string> artifacts;
        auto artifact = [&](const char* name) {
            artifacts.push_back(name);
            return out / name;
        };

        write_beta_csv(result.beta,
                       linear_grid(result.binned.layout.lo, result.binned.layout.hi, opts.beta_grid),
                       artifact("beta.csv").string());
        write_eigen_csv(result.pca, artifact("eigenfunctions.csv"));
        write_json_file(eigen_summary_json(result.pca), artifact("eigen_summary.json"));
        write_draws_binary(result.draws, artifact("draws.bin").string());
        write_json_file(diagnostics_json(result.draws), artifact("diagnostics.json"));

        std::vector<double> band_grid;
        if (opts.band_grid > 0)
            band_grid = linear_grid(result.binned.layout.lo, result.binned.layout.hi, opts.band_grid);
        write_bands_csv(summarize_random_effects(result.draws, EffectLevel::subject, 0.05, band_grid),
                        artifact("bands_subject.csv").string());
        write_bands_csv(
            summarize_random_effects(result.draws, EffectLevel::subject_visit, 0.05, band_grid),
            artifact("bands_visit.csv").string());
        timings.push_back(
            {"outputs", std::chrono::duration<double>(Clock::now() - stage_start).count()});

        const double wall = std::chrono::duration<double>(Clock::now() - wall_start).count();
        manifest["status"] = "ok";
        manifest["n_records"] = ingest.dataset.n_records();
        manifest["n_subjects"] = ingest.dataset.n_subjects();
        manifest["n_visits"] = ingest.dataset.n_visits();
        manifest["dropped_missing_outcome"] = ingest.dropped_missing_outcome;
        manifest["n_bins"] = result.binned.n_bins();
        manifest["n_failed_bins"] = result.n_failed_bins;
        manifest["k1"] = result.pca.k1;
        manifest["k2"] = result.pca.k2;
        manifest["pve1"] = result.pca.pve1;
        manifest["pve2"] = result.pca.pve2;
        manifest["sigma2_noise"] = result.pca.sigma2_noise;
        manifest["max_variance_rhat"] = result.draws.max_variance_rhat;
        manifest["warnings"] = result.warnings;
        manifest["timings"] = timings_json(timings);
        manifest["wall_seconds"] = wall;
        manifest["artifacts"] = artifacts;
        write_json_file(manifest, out / "manifest.json");

        std::cout << "fit ok: " << result.binned.n_bins() << " bins, K1=" << result.pca.k1
                  << ", K2=" << result.pca.k2 << ", " << result.draws.total_draws()
                  << " posterior draws; artifacts in " << out.string() << "\n";
        for (const auto& w : result.warnings) std::cout << "  " << w << "\n";
        return 0;
    } catch (const std::exception& e) {
        manifest["status"] = "error";
        manifest["failed_stage"] = stage;
        manifest["error"] = e.what();
        manifest["timings"] = timings_json(timings);
        write_json_file(manifest, out / "manifest.json");
        throw;
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateOptions {
    CommonOptions common;
    std::string family = "gaussian";
    int case_id = 1;
    int subjects = 100;
    int visits = 5;
    int grid_len = 100;
    int k1 = 4, k2 = 4;
    double sigma2 = 1.0;
    double missing_prob = 0.0;
    double missing_frac = 0.0;
};

SimConfig resolve_sim(const SimulateOptions& o) {
    if (o.case_id != 1 && o.case_id != 2) throw InputError("--case must be 1 or 2");
    SimConfig sim;
    sim.family = resolve_family(o.family);
    sim.visit_basis = o.case_id == 1 ? VisitBasis::trig_basis : VisitBasis::legendre_basis;
    sim.n_subjects = o.subjects;
    sim.n_visits = o.visits;
    sim.grid_len = o.grid_len;
    sim.k1 = o.k1;
    sim.k2 = o.k2;
    sim.sigma2 = o.sigma2;
    sim.missing_visit_prob = o.missing_prob;
    sim.missing_frac = o.missing_frac;
    return sim;
}

void add_sim_options(CLI::App* cmd, SimulateOptions& opts, bool with_family = true) {
    if (with_family)
        cmd->add_option("--family", opts.family, "outcome family")
            ->check(CLI::IsMember({"gaussian", "binomial"}));
    cmd->add_option("--case", opts.case_id,
                    "visit-level basis: 1 = trigonometric, 2 = polynomial")
        ->check(CLI::IsMember({1, 2}));
    cmd->add_option("--subjects", opts.subjects, "number of subjects")->check(CLI::PositiveNumber);
    cmd->add_option("--visits", opts.visits, "visits per subject")->check(CLI::PositiveNumber);
    cmd->add_option("--grid-len", opts.grid_len, "locations per visit")->check(CLI::PositiveNumber);
    cmd->add_option("--k1", opts.k1, "subject-level components")->check(CLI::PositiveNumber);
    cmd->add_option("--k2", opts.k2, "visit-level components")->check(CLI::PositiveNumber);
    cmd->add_option("--sigma2", opts.sigma2, "Gaussian noise variance")->check(CLI::PositiveNumber);
    cmd->add_option("--missing-prob", opts.missing_prob, "per-visit missing-block probability")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--missing-frac", opts.missing_frac, "missing-block length as domain fraction")
        ->check(CLI::Range(0.0, 1.0));
}

void overlay_sim_options(ConfigOverlay& cfg, SimulateOptions& opts) {
    cfg.take("family", opts.family);
    cfg.take("case", opts.case_id);
    cfg.take("subjects", opts.subjects);
    cfg.take("visits", opts.visits);
    cfg.take("grid-len", opts.grid_len);
    cfg.take("k1", opts.k1);
    cfg.take("k2", opts.k2);
    cfg.take("sigma2", opts.sigma2);
    cfg.take("missing-prob", opts.missing_prob);
    cfg.take("missing-frac", opts.missing_frac);
}

json sim_config_json(const SimulateOptions& o) {
    json j;
    j["seed"] = o.common.seed;
    j["out"] = o.common.out_dir;
    j["family"] = o.family;
    j["case"] = o.case_id;
    j["subjects"] = o.subjects;
    j["visits"] = o.visits;
    j["grid-len"] = o.grid_len;
    j["k1"] = o.k1;
    j["k2"] = o.k2;
    j["sigma2"] = o.sigma2;
    j["missing-prob"] = o.missing_prob;
    j["missing-frac"] = o.missing_frac;
    return j;
}

void write_truth_csv(const SimulatedData& sim, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open '" + path.string() + "' for writing");
    os << "subject,visit,s,r,eta,removed\n";
    const FunctionalDataset& d = sim.dataset;
    for (std::size_t v = 0; v < d.n_visits(); ++v) {
        const std::string& subj = d.subject_ids[static_cast<std::size_t>(d.visit_subject[v])];
        for (std::size_t l = 0; l < sim.truth.grid.size(); ++l)
            os << csv_quote(subj) << ',' << csv_quote(d.visit_ids[v]) << ','
               << fmt(sim.truth.grid[l]) << ','
               << fmt(sim.truth.r(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(l))) << ','
               << fmt(sim.truth.eta(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(l)))
               << ',' << int(sim.removed[v][l]) << '\n';
    }
    if (!os) throw InputError("failed while writing '" + path.string() + "'");
}

int cmd_simulate(SimulateOptions opts) {
    if (!opts.common.config_path.empty()) {
        ConfigOverlay cfg(opts.common.config_path);
        overlay_common(cfg, opts.common);
        overlay_sim_options(cfg, opts);
        cfg.finish();
    }
    const fs::path out = prepare_out_dir(opts.common.out_dir);
    const auto wall_start = Clock::now();

    const SimulatedData sim = generate_dataset(resolve_sim(opts), opts.common.seed);
    write_long_csv_file(sim.dataset, (out / "data.csv").string());
    write_truth_csv(sim, out / "truth.csv");

    json manifest;
    manifest["tool"] = "frim";
    manifest["version"] = kVersion;
    manifest["command"] = "simulate";
    manifest["status"] = "ok";
    manifest["config"] = sim_config_json(opts);
    manifest["n_records"] = sim.dataset.n_records();
    manifest["n_visits"] = sim.dataset.n_visits();
    manifest["wall_seconds"] = std::chrono::duration<double>(Clock::now() - wall_start).count();
    manifest["artifacts"] = {"data.csv", "truth.csv"};
    write_json_file(manifest, out / "manifest.json");
    std::cout << "simulate ok: " << sim.dataset.n_records() << " records for "
              << sim.dataset.n_subjects() << " subjects; artifacts in " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

struct CoverageOptions {
    CommonOptions common;
    SimulateOptions sim;  // shares the generator knobs (common block unused)
    BinOptions bins;
    ModelOptions model;
    int replicates = 20;
    double alpha = 0.05;
    bool fixed_scores = true;
};

int cmd_coverage(CoverageOptions opts) {
    if (!opts.common.config_path.empty()) {
        ConfigOverlay cfg(opts.common.config_path);
        overlay_common(cfg, opts.common);
        overlay_sim_options(cfg, opts.sim);
        overlay_bin_options(cfg, opts.bins);
        overlay_model_options(cfg, opts.model);
        cfg.take("replicates", opts.replicates);
        cfg.take("alpha", opts.alpha);
        cfg.take("fixed-scores", opts.fixed_scores);
        cfg.finish();
    }
    opts.sim.family = opts.model.family;  // one family knob drives both
    const fs::path out = prepare_out_dir(opts.common.out_dir);
    const auto wall_start = Clock::now();

    StudyConfig study;
    study.sim = resolve_sim(opts.sim);
    study.pipeline = resolve_pipeline(opts.common, opts.bins, opts.model, "");
    study.pipeline.workers = 1;  // replicates are the parallel unit
    study.replicates = opts.replicates;
    study.seed = opts.common.seed;
    study.fixed_scores = opts.fixed_scores;
    study.alpha = opts.alpha;
    study.workers = opts.common.workers;
    const StudyResult result = run_coverage_study(study);

    std::ofstream os(out / "coverage.csv");
    if (!os) throw InputError("cannot open coverage.csv for writing");
    os << "case,family,subjects,visits,grid_len,missing_prob,missing_frac,alpha,replicates,"
          "n_ok,n_failed,mpcp,mpcp_masked\n";
    os << opts.sim.case_id << ',' << opts.model.family << ',' << opts.sim.subjects << ','
       << opts.sim.visits << ',' << opts.sim.grid_len << ',' << fmt(opts.sim.missing_prob) << ','
       << fmt(opts.sim.missing_frac) << ',' << fmt(opts.alpha) << ',' << opts.replicates << ','
       << result.n_ok << ',' << result.n_failed << ',' << fmt(result.mpcp) << ','
       << fmt(result.mpcp_masked) << '\n';
    os.close();

    json manifest;
    manifest["tool"] = "frim";
    manifest["version"] = kVersion;
    manifest["command"] = "coverage";
    manifest["status"] = "ok";
    json config = sim_config_json(opts.sim);
    config["seed"] = opts.common.seed;
    config["workers"] = opts.common.workers;
    config["out"] = opts.common.out_dir;
    config["replicates"] = opts.replicates;
    config["alpha"] = opts.alpha;
    config["fixed-scores"] = opts.fixed_scores;
    config["family"] = opts.model.family;
    config["pve"] = opts.model.pve;
    config["kmax"] = opts.model.kmax;
    config["chains"] = opts.model.chains;
    config["warmup"] = opts.model.warmup;
    config["draws"] = opts.model.draws;
    config["missing-policy"] = opts.model.missing_policy;
    manifest["config"] = config;
    manifest["mpcp"] = result.mpcp;
    if (!std::isnan(result.mpcp_masked)) manifest["mpcp_masked"] = result.mpcp_masked;
    manifest["replicate_mpcp"] = result.replicate_mpcp;
    manifest["n_ok"] = result.n_ok;
    manifest["n_failed"] = result.n_failed;
    manifest["failures"] = result.failures;
    manifest["wall_seconds"] = std::chrono::duration<double>(Clock::now() - wall_start).count();
    manifest["artifacts"] = {"coverage.csv"};
    write_json_file(manifest, out / "manifest.json");

    std::cout << "coverage ok: MPCP = " << result.mpcp;
    if (!std::isnan(result.mpcp_masked)) std::cout << " (missing cells: " << result.mpcp_masked << ")";
    std::cout << " over " << result.n_ok << " replicates";
    if (result.n_failed > 0) std::cout << " (" << result.n_failed << " failed)";
    std::cout << "; artifacts in " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectOptions {
    CommonOptions common;
    BinOptions bins;
    ModelOptions model;
    std::string input;
    std::string domain;
    std::vector<std::string> test_pairs;  // "SUBJECT:VISIT"
    bool test_last = false;
    double alpha = 0.05;
    double min_duration = 0.0;
};

int cmd_detect(DetectOptions opts) {
    if (!opts.common.config_path.empty()) {
        ConfigOverlay cfg(opts.common.config_path);
        overlay_common(cfg, opts.common);
        overlay_bin_options(cfg, opts.bins);
        overlay_model_options(cfg, opts.model);
        cfg.take("input", opts.input);
        cfg.take("domain", opts.domain);
        cfg.take("test", opts.test_pairs);
        cfg.take("test-last", opts.test_last);
        cfg.take("alpha", opts.alpha);
        cfg.take("min-duration", opts.min_duration);
        cfg.finish();
    }
    if (opts.input.empty()) throw InputError("detect: no input file given");
    if (opts.test_pairs.empty() && !opts.test_last)
        throw InputError("detect: give --test SUBJECT:VISIT (repeatable) or --test-last");
    const fs::path out = prepare_out_dir(opts.common.out_dir);
    const auto wall_start = Clock::now();

    const IngestResult ingest =
        ingest_long_csv_file(opts.input, resolve_family(opts.model.family), CsvSchema());
    const FunctionalDataset& data = ingest.dataset;

    // Resolve the test visits and mark everything else as training.
    std::vector<std::pair<std::string, std::string>> tests;
    std::vector<std::uint8_t> train_filter(data.n_visits(), 1);
    auto mark_test = [&](std::size_t v) {
        train_filter[v] = 0;
        tests.emplace_back(data.subject_ids[static_cast<std::size_t>(data.visit_subject[v])],
                           data.visit_ids[v]);
    };
    if (opts.test_last) {
        for (const auto& visits : data.subject_visits)
            if (visits.size() >= 2) mark_test(static_cast<std::size_t>(visits.back()));
        if (tests.empty())
            throw InputError("detect: --test-last found no subject with at least two visits");
    } else {
        for (const std::string& pair : opts.test_pairs) {
            const auto colon = pair.find(':');
            if (colon == std::string::npos)
                throw InputError("detect: --test expects SUBJECT:VISIT, got '" + pair + "'");
            const std::string subject = pair.substr(0, colon), visit = pair.substr(colon + 1);
            bool found = false;
            for (std::size_t v = 0; v < data.n_visits(); ++v)
                if (data.visit_ids[v] == visit &&
                    data.subject_ids[static_cast<std::size_t>(data.visit_subject[v])] == subject) {
                    mark_test(v);
                    found = true;
                    break;
                }
            if (!found) throw InputError("detect: unknown test visit '" + pair + "'");
        }
    }

    // Eigenstructure from training visits only; the sampler still sees every
    // visit, so the test visits get posterior deviation curves of their own.
    PipelineSettings settings = resolve_pipeline(opts.common, opts.bins, opts.model, opts.domain);
    settings.pca_visit_filter = train_filter;
    const FitResult fit = fit_frim(data, settings);

    AnomalyOptions anomaly;
    anomaly.alpha = opts.alpha;
    anomaly.min_duration = opts.min_duration;
    const AnomalyReport report = detect_anomalies(fit.draws, tests, anomaly);

    std::ofstream visits_csv(out / "anomaly_visits.csv");
    if (!visits_csv) throw InputError("cannot open anomaly_visits.csv for writing");
    visits_csv << "subject,visit,flagged_fraction,n_intervals\n";
    std::ofstream intervals_csv(out / "anomaly_intervals.csv");
    if (!intervals_csv) throw InputError("cannot open anomaly_intervals.csv for writing");
    intervals_csv << "subject,visit,start,end,duration\n";
    for (const auto& v : report.visits) {
        visits_csv << csv_quote(v.subject_id) << ',' << csv_quote(v.visit_id) << ','
                   << fmt(v.flagged_fraction) << ',' << v.intervals.size() << '\n';
        for (const auto& iv : v.intervals)
            intervals_csv << csv_quote(v.subject_id) << ',' << csv_quote(v.visit_id) << ','
                          << fmt(iv.start) << ',' << fmt(iv.end) << ',' << fmt(iv.end - iv.start)
                          << '\n';
    }
    visits_csv.close();
    intervals_csv.close();

    json manifest;
    manifest["tool"] = "frim";
    manifest["version"] = kVersion;
    manifest["command"] = "detect";
    manifest["status"] = "ok";
    json config;
    config["input"] = opts.input;
    config["seed"] = opts.common.seed;
    config["workers"] = opts.common.workers;
    config["out"] = opts.common.out_dir;
    config["family"] = opts.model.family;
    config["alpha"] = opts.alpha;
    config["min-duration"] = opts.min_duration;
    config["test-last"] = opts.test_last;
    if (!opts.test_pairs.empty()) config["test"] = opts.test_pairs;
    manifest["config"] = config;
    manifest["n_test_visits"] = report.visits.size();
    manifest["mean_flagged_fraction"] = report.mean_flagged_fraction;
    manifest["max_variance_rhat"] = fit.draws.max_variance_rhat;
    manifest["warnings"] = fit.warnings;
    manifest["wall_seconds"] = std::chrono::duration<double>(Clock::now() - wall_start).count();
    manifest["artifacts"] = {"anomaly_visits.csv", "anomaly_intervals.csv"};
    write_json_file(manifest, out / "manifest.json");

    std::cout << "detect ok: " << report.visits.size() << " test visits, mean flagged fraction "
              << report.mean_flagged_fraction << "; artifacts in " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

struct ExportOptions {
    CommonOptions common;
    std::string input;
    std::string csv_path;
    std::string block = "all";
    std::string bands_path;
    std::string level = "combined";
    double alpha = 0.05;
    int band_grid = 0;
};

int cmd_export(ExportOptions opts) {
    if (!opts.common.config_path.empty()) {
        ConfigOverlay cfg(opts.common.config_path);
        overlay_common(cfg, opts.common);
        cfg.take("input", opts.input);
        cfg.take("csv", opts.csv_path);
        cfg.take("block", opts.block);
        cfg.take("bands", opts.bands_path);
        cfg.take("level", opts.level);
        cfg.take("alpha", opts.alpha);
        cfg.take("band-grid", opts.band_grid);
        cfg.finish();
    }
    if (opts.input.empty()) throw InputError("export: no draws file given");
    if (opts.csv_path.empty() && opts.bands_path.empty())
        throw InputError("export: nothing to do (give --csv and/or --bands)");

    const PosteriorDraws draws = read_draws_binary(opts.input);
    if (!opts.csv_path.empty()) write_draws_csv(draws, opts.csv_path, opts.block);
    if (!opts.bands_path.empty()) {
        EffectLevel level;
        if (opts.level == "subject")
            level = EffectLevel::subject;
        else if (opts.level == "visit")
            level = EffectLevel::subject_visit;
        else if (opts.level == "combined")
            level = EffectLevel::combined;
        else
            throw InputError("export: unknown level '" + opts.level + "'");
        std::vector<double> grid;
        if (opts.band_grid > 0)
            grid = linear_grid(draws.grid.front(), draws.grid.back(), opts.band_grid);
        write_bands_csv(summarize_random_effects(draws, level, opts.alpha, grid), opts.bands_path);
    }
    std::cout << "export ok\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prediction inference for multilevel functional random effects"};
    app.set_version_flag("--version", std::string("frim ") + kVersion);
    app.require_subcommand(1);

    FitOptions fit_opts;
    CLI::App* fit = app.add_subcommand("fit", "run the estimation pipeline on a CSV file");
    fit->add_option("input", fit_opts.input, "long-format CSV input")->required();
    add_common(fit, fit_opts.common);
    add_bin_options(fit, fit_opts.bins);
    add_model_options(fit, fit_opts.model);
    fit->add_option("--domain", fit_opts.domain, "functional domain as LO:HI (default: observed range)");
    fit->add_option("--col-subject", fit_opts.col_subject, "subject id column name");
    fit->add_option("--col-visit", fit_opts.col_visit, "visit id column name");
    fit->add_option("--col-location", fit_opts.col_location, "functional location column name");
    fit->add_option("--col-outcome", fit_opts.col_outcome, "outcome column name");
    fit->add_option("--covariates", fit_opts.covariates,
                    "visit-level covariate columns (default: every remaining column)")
        ->delimiter(',');
    fit->add_option("--beta-grid", fit_opts.beta_grid, "grid points for the coefficient CSV");
    fit->add_option("--band-grid", fit_opts.band_grid,
                    "grid points for the band CSVs (0 = bin centers)");

    SimulateOptions sim_opts;
    CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_common(simulate, sim_opts.common);
    add_sim_options(simulate, sim_opts);

    CoverageOptions cov_opts;
    CLI::App* coverage = app.add_subcommand("coverage", "run a credible-band coverage study");
    add_common(coverage, cov_opts.common);
    add_sim_options(coverage, cov_opts.sim, /*with_family=*/false);
    add_bin_options(coverage, cov_opts.bins);
    add_model_options(coverage, cov_opts.model, /*with_policy=*/true);
    coverage->add_option("--replicates", cov_opts.replicates, "number of replicates")
        ->check(CLI::PositiveNumber);
    coverage->add_option("--alpha", cov_opts.alpha, "band level")->check(CLI::Range(1e-6, 0.999999));
    coverage->add_flag("--fixed-scores,!--fresh-scores", cov_opts.fixed_scores,
                       "hold the latent scores fixed across replicates (default on)");

    DetectOptions det_opts;
    CLI::App* detect = app.add_subcommand("detect", "flag unusual visits against training bands");
    detect->add_option("input", det_opts.input, "long-format CSV input")->required();
    add_common(detect, det_opts.common);
    add_bin_options(detect, det_opts.bins);
    add_model_options(detect, det_opts.model);
    detect->add_option("--domain", det_opts.domain, "functional domain as LO:HI");
    detect->add_option("--test", det_opts.test_pairs, "test visit as SUBJECT:VISIT (repeatable)");
    detect->add_flag("--test-last", det_opts.test_last,
                     "use each subject's last visit as the test visit");
    detect->add_option("--alpha", det_opts.alpha, "band level")->check(CLI::Range(1e-6, 0.999999));
    detect->add_option("--min-duration", det_opts.min_duration,
                       "drop flagged runs shorter than this")
        ->check(CLI::NonNegativeNumber);

    ExportOptions exp_opts;
    CLI::App* exp = app.add_subcommand("export", "convert a posterior-draws file to CSV");
    exp->add_option("input", exp_opts.input, "draws file written by fit")->required();
    add_common(exp, exp_opts.common);
    exp->add_option("--csv", exp_opts.csv_path, "write a long draws table here");
    exp->add_option("--block", exp_opts.block, "draws table contents")
        ->check(CLI::IsMember({"scores", "variances", "all"}));
    exp->add_option("--bands", exp_opts.bands_path, "write a credible-bands table here");
    exp->add_option("--level", exp_opts.level, "band level for --bands")
        ->check(CLI::IsMember({"subject", "visit", "combined"}));
    exp->add_option("--alpha", exp_opts.alpha, "band level for --bands")
        ->check(CLI::Range(1e-6, 0.999999));
    exp->add_option("--band-grid", exp_opts.band_grid, "grid points for --bands (0 = bin centers)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(fit)) return cmd_fit(fit_opts);
        if (app.got_subcommand(simulate)) return cmd_simulate(sim_opts);
        if (app.got_subcommand(coverage)) return cmd_coverage(cov_opts);
        if (app.got_subcommand(detect)) return cmd_detect(det_opts);
        if (app.got_subcommand(exp)) return cmd_export(exp_opts);
        throw Error("no subcommand selected");
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
