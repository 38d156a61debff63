#include "prevmap/pipeline.hpp"

#include "prevmap/report.hpp"

#include <openssl/evp.h>

#include <Eigen/Core>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace prevmap {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Strict JSON helpers

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + ": expected an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) {
        throw ConfigError(where + ": missing required key '" + key + "'");
    }
    T out{};
    read(j, key, out, where);
    return out;
}

void read_optional(const json& j, const char* key, std::optional<double>& out, const std::string& where) {
    if (j.contains(key) && !j.at(key).is_null()) {
        double v = 0.0;
        read(j, key, v, where);
        out = v;
    }
}

Level level_from(const std::string& s, const std::string& where) {
    try {
        return parse_level(s);
    } catch (const Error&) {
        throw ConfigError(where + ": unknown level '" + s + "'");
    }
}

std::uint64_t read_seed(const json& j, const std::string& where) {
    if (!j.contains("seed")) {
        throw ConfigError(where + ": an explicit seed is required");
    }
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
        throw ConfigError(where + ".seed: expected a non-negative integer");
    }
    return s.get<std::uint64_t>();
}

// ---------------------------------------------------------------------------
// Artifact writing

struct StageContext {
    fs::path out;
    std::map<std::string, std::string> artifacts;  // relative path -> sha256
    Warnings warnings;

    void write_text(const std::string& rel, const std::string& content) {
        csv::write_text_atomic(out / rel, content);
        artifacts[rel] = sha256_hex(content);
    }
    void write_table(const std::string& rel, const csv::Table& t) { write_text(rel, csv::to_string(t)); }
    void write_warnings(const std::string& stage) {
        std::string text;
        for (const auto& m : warnings.messages()) {
            text += m + "\n";
        }
        write_text(stage + "/warnings.txt", text);
    }
    fs::path path(const std::string& rel) const { return out / rel; }
};

csv::Table read_artifact(const StageContext& ctx, const std::string& rel, const std::string& stage) {
    const fs::path p = ctx.path(rel);
    if (!fs::exists(p)) {
        throw DataError("missing artifact " + rel + " (run stage '" + stage + "' first)");
    }
    return csv::read_file(p);
}

std::string read_text_artifact(const StageContext& ctx, const std::string& rel, const std::string& stage) {
    const fs::path p = ctx.path(rel);
    if (!fs::exists(p)) {
        throw DataError("missing artifact " + rel + " (run stage '" + stage + "' first)");
    }
    return csv::read_text(p);
}

csv::Table matrix_table(const Eigen::MatrixXd& m, const std::string& row_name,
                        const std::vector<std::string>& row_ids) {
    std::vector<std::string> header{row_name};
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
        header.push_back("d" + std::to_string(k));
    }
    csv::Table t(header);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<std::string> row{row_ids[static_cast<std::size_t>(r)]};
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            row.push_back(csv::format_number(m(r, k)));
        }
        t.add_row(std::move(row));
    }
    return t;
}

Eigen::MatrixXd parse_matrix_table(const csv::Table& t) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(t.size()),
                      static_cast<Eigen::Index>(t.header().size()) - 1);
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            m(static_cast<Eigen::Index>(r), k) = csv::parse_number(t.at(r, static_cast<std::size_t>(k) + 1));
        }
    }
    return m;
}

// Appends `src` to `dst`; an empty `dst` takes the header of `src`.
void append_rows(csv::Table& dst, const csv::Table& src) {
    if (dst.header().empty()) {
        dst = csv::Table(src.header());
    } else if (dst.header() != src.header()) {
        throw NumericalError("internal: mismatched table headers");
    }
    for (const auto& row : src.rows()) {
        dst.add_row(row);
    }
}

csv::Table fh_input_table(const TransformResult& t) {
    csv::Table out({"area_id", "theta_hat", "v_hat", "status"});
    for (const auto& e : t.estimates) {
        out.add_row({e.area_id, csv::format_number(e.theta_hat), csv::format_number(e.v_hat), "used"});
    }
    for (const auto& o : t.omitted) {
        out.add_row({o.area_id, "NA", "NA", o.reason});
    }
    return out;
}

TransformResult parse_fh_input(const csv::Table& t) {
    const auto c_id = t.require("area_id");
    const auto c_th = t.require("theta_hat");
    const auto c_v = t.require("v_hat");
    const auto c_s = t.require("status");
    TransformResult r;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t.at(i, c_s) == "used") {
            r.estimates.push_back({t.at(i, c_id), csv::parse_number(t.at(i, c_th)),
                                   csv::parse_number(t.at(i, c_v))});
        } else {
            r.omitted.push_back({t.at(i, c_id), t.at(i, c_s)});
        }
    }
    return r;
}

SurveyDataset national_copy(const SurveyDataset& ds) {
    SurveyDataset n = ds;
    for (auto& c : n.clusters) {
        c.admin1_id = "national";
    }
    return n;
}

std::map<std::string, std::string> parent_map(const Geography& geo, bool national) {
    std::map<std::string, std::string> m;
    const auto& a1 = geo.areas(Level::admin1);
    if (national) {
        for (const auto& a : a1) {
            m[a.id] = "national";
        }
        for (const auto& a : geo.areas(Level::admin2)) {
            m[a.id] = "national";
        }
        return m;
    }
    for (const auto& a : geo.areas(Level::admin2)) {
        m[a.id] = a.parent_id;
    }
    return m;
}

/// Target-population weighted mean covariates per area, rows in `ids` order.
Eigen::MatrixXd area_covariate_means(const PixelTable& pixels, Level level,
                                     const std::vector<std::string>& ids) {
    const auto p = static_cast<Eigen::Index>(pixels.covariate_names.size());
    std::map<std::string, std::pair<Eigen::VectorXd, double>> acc;
    for (const auto& px : pixels.pixels) {
        auto& a = acc[px.area(level)];
        if (a.first.size() == 0) {
            a.first = Eigen::VectorXd::Zero(p);
        }
        for (Eigen::Index j = 0; j < p; ++j) {
            a.first[j] += px.target_pop * px.covariates[static_cast<std::size_t>(j)];
        }
        a.second += px.target_pop;
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(ids.size()), p);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = acc.find(ids[i]);
        if (it == acc.end() || !(it->second.second > 0.0)) {
            throw DataError("area " + ids[i] + " has no populated pixels for covariates");
        }
        x.row(static_cast<Eigen::Index>(i)) = (it->second.first / it->second.second).transpose();
    }
    return x;
}

csv::Table fixed_effects_table(const PredictorDraws& pd) {
    csv::Table t({"name", "mean", "median", "sd", "lower95", "upper95"});
    auto add = [&](const Eigen::MatrixXd& m, const std::string& base, const std::vector<std::string>& labels) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const SummaryStats s = summarize(m.row(r).transpose());
            const std::string name = m.rows() == 1 && labels.size() != 1 ? base
                                                                          : base + "_" + labels[static_cast<std::size_t>(r)];
            t.add_row({name, csv::format_number(s.mean), csv::format_number(s.median), csv::format_number(s.sd),
                       csv::format_number(s.lower95), csv::format_number(s.upper95)});
        }
    };
    add(pd.alpha, "alpha", pd.admin1_ids);
    add(pd.gamma, "gamma", pd.admin1_ids);
    add(pd.beta, "beta", pd.standardization.names);
    add(pd.delta, "delta", pd.admin1_ids);
    return t;
}

std::string model_json(const ModelOutput& m, const ModelRequest& r) {
    json j;
    j["tag"] = m.tag;
    j["type"] = r.type == ModelType::fay_herriot ? "fh" : "cluster";
    j["level"] = std::string(to_string(r.level));
    if (r.type == ModelType::cluster) {
        j["variant"] = std::string(to_string(r.variant));
    } else {
        j["spatial"] = r.spatial;
        j["intercept"] = r.intercept;
    }
    j["covariates"] = r.covariates;
    j["warnings"] = m.warnings;
    return j.dump(2) + "\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

PriorSettings parse_priors(const json& j) {
    const std::string w = "priors";
    check_keys(j, {"sigma_u", "sigma_alpha", "phi_u", "phi_alpha", "iid_sigma_u", "iid_sigma_alpha",
                   "intercept_precision", "covariate_precision", "strata_precision"},
               w);
    PriorSettings p;
    read(j, "sigma_u", p.sigma_u, w);
    read(j, "sigma_alpha", p.sigma_alpha, w);
    read(j, "phi_u", p.phi_u, w);
    read(j, "phi_alpha", p.phi_alpha, w);
    read(j, "iid_sigma_u", p.iid_sigma_u, w);
    read(j, "iid_sigma_alpha", p.iid_sigma_alpha, w);
    read(j, "intercept_precision", p.intercept_precision, w);
    read(j, "covariate_precision", p.covariate_precision, w);
    read(j, "strata_precision", p.strata_precision, w);
    for (double a : {p.sigma_alpha, p.phi_alpha, p.iid_sigma_alpha}) {
        if (!(a > 0.0 && a < 1.0)) {
            throw ConfigError("priors: tail probabilities must lie in (0, 1)");
        }
    }
    for (double v : {p.sigma_u, p.iid_sigma_u, p.intercept_precision, p.covariate_precision,
                     p.strata_precision}) {
        if (!(v > 0.0)) {
            throw ConfigError("priors: thresholds and precisions must be positive");
        }
    }
    if (!(p.phi_u > 0.0 && p.phi_u < 1.0)) {
        throw ConfigError("priors.phi_u must lie in (0, 1)");
    }
    return p;
}

GridSettings parse_grid(const json& j) {
    const std::string w = "grid";
    check_keys(j, {"sigma_points", "phi_points", "d_points", "iid_points", "d_min", "d_max",
                   "prune_log_drop", "fixed_sigma", "fixed_phi", "fixed_d", "fixed_iid_sigma"},
               w);
    GridSettings g;
    read(j, "sigma_points", g.sigma_points, w);
    read(j, "phi_points", g.phi_points, w);
    read(j, "d_points", g.d_points, w);
    read(j, "iid_points", g.iid_points, w);
    read(j, "d_min", g.d_min, w);
    read(j, "d_max", g.d_max, w);
    read(j, "prune_log_drop", g.prune_log_drop, w);
    read_optional(j, "fixed_sigma", g.fixed_sigma, w);
    read_optional(j, "fixed_phi", g.fixed_phi, w);
    read_optional(j, "fixed_d", g.fixed_d, w);
    read_optional(j, "fixed_iid_sigma", g.fixed_iid_sigma, w);
    if (g.sigma_points < 1 || g.phi_points < 1 || g.d_points < 1 || g.iid_points < 1) {
        throw ConfigError("grid: point counts must be positive");
    }
    if (!(g.d_min > 0.0 && g.d_min <= g.d_max && g.d_max < 1.0)) {
        throw ConfigError("grid: need 0 < d_min <= d_max < 1");
    }
    if (!(g.prune_log_drop > 0.0)) {
        throw ConfigError("grid.prune_log_drop must be positive");
    }
    return g;
}

std::vector<ModelRequest> parse_models(const json& j) {
    if (!j.is_array() || j.empty()) {
        throw ConfigError("models: expected a non-empty array");
    }
    std::vector<ModelRequest> out;
    std::set<std::string> tags;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string w = "models[" + std::to_string(i) + "]";
        const auto& m = j[i];
        check_keys(m, {"tag", "type", "level", "variant", "spatial", "intercept", "covariates"}, w);
        ModelRequest r;
        const auto type = require<std::string>(m, "type", w);
        if (type == "fh") {
            r.type = ModelType::fay_herriot;
            if (m.contains("variant")) {
                throw ConfigError(w + ": 'variant' applies to cluster models only");
            }
        } else if (type == "cluster") {
            r.type = ModelType::cluster;
            r.covariates = true;
            std::string variant = "stratified_nested";
            read(m, "variant", variant, w);
            try {
                r.variant = parse_cluster_variant(variant);
            } catch (const Error& e) {
                throw ConfigError(w + ": " + e.what());
            }
            if (m.contains("spatial") || m.contains("intercept")) {
                throw ConfigError(w + ": 'spatial' and 'intercept' apply to fh models only");
            }
        } else {
            throw ConfigError(w + ": unknown model type '" + type + "'");
        }
        r.level = level_from(require<std::string>(m, "level", w), w);
        read(m, "spatial", r.spatial, w);
        read(m, "intercept", r.intercept, w);
        read(m, "covariates", r.covariates, w);
        if (r.type == ModelType::cluster && is_nested(r.variant) && r.level == Level::admin1) {
            throw ConfigError(w + ": nested variants need admin2-level random effects");
        }
        r.tag = r.type == ModelType::fay_herriot
                    ? "fh_" + std::string(to_string(r.level))
                    : std::string(to_string(r.variant)) + "_" + std::string(to_string(r.level));
        read(m, "tag", r.tag, w);
        if (r.tag.empty() || r.tag.find_first_of("/\\ .") != std::string::npos) {
            throw ConfigError(w + ": tag must be a non-empty name without '/', '\\', ' ' or '.'");
        }
        if (!tags.insert(r.tag).second) {
            throw ConfigError(w + ": duplicate model tag '" + r.tag + "'");
        }
        out.push_back(r);
    }
    return out;
}

RunConfig RunConfig::parse(const json& j, const fs::path& base_dir) {
    check_keys(j, {"inputs", "schema", "models", "priors", "grid", "seed", "n_draws", "thresholds",
                   "aggregation", "output_dir"},
               "config");
    RunConfig c;
    c.source = j;
    const auto& in = j.contains("inputs") ? j.at("inputs") : throw ConfigError("config: missing 'inputs'");
    check_keys(in, {"survey", "geography", "pixels", "urban_fractions"}, "inputs");
    auto path_of = [&](const char* key) {
        fs::path p = require<std::string>(in, key, "inputs");
        if (p.is_relative()) {
            p = base_dir / p;
        }
        if (!fs::exists(p)) {
            throw ConfigError("inputs." + std::string(key) + ": file not found: " + p.string());
        }
        return p;
    };
    c.survey = path_of("survey");
    c.geography = path_of("geography");
    c.pixels = path_of("pixels");
    c.urban_fractions = path_of("urban_fractions");

    if (j.contains("schema")) {
        const auto& s = j.at("schema");
        const std::string w = "schema";
        check_keys(s, {"outcome", "weight", "cluster", "stratum", "urban", "admin1", "admin2", "lon",
                       "lat", "covariates"},
                   w);
        read(s, "outcome", c.schema.outcome, w);
        read(s, "weight", c.schema.weight, w);
        read(s, "cluster", c.schema.cluster, w);
        read(s, "stratum", c.schema.stratum, w);
        read(s, "urban", c.schema.urban, w);
        read(s, "admin1", c.schema.admin1, w);
        read(s, "admin2", c.schema.admin2, w);
        read(s, "lon", c.schema.lon, w);
        read(s, "lat", c.schema.lat, w);
        read(s, "covariates", c.schema.covariates, w);
    }
    c.models = parse_models(j.contains("models") ? j.at("models") : json::array());
    if (j.contains("priors")) {
        c.priors = parse_priors(j.at("priors"));
    }
    if (j.contains("grid")) {
        c.grid = parse_grid(j.at("grid"));
    }
    c.seed = read_seed(j, "config");
    read(j, "n_draws", c.n_draws, "config");
    if (c.n_draws < 100) {
        throw ConfigError("config.n_draws must be at least 100");
    }
    if (j.contains("thresholds")) {
        const auto& t = j.at("thresholds");
        const std::string w = "thresholds";
        check_keys(t, {"cv", "exceedance", "variance_epsilon", "v_material_ratio"}, w);
        read(t, "cv", c.thresholds.cv, w);
        read(t, "exceedance", c.thresholds.exceedance, w);
        read(t, "variance_epsilon", c.thresholds.variance_epsilon, w);
        read(t, "v_material_ratio", c.thresholds.v_material_ratio, w);
        for (double e : c.thresholds.exceedance) {
            if (!(e >= 0.0 && e <= 1.0)) {
                throw ConfigError("thresholds.exceedance values must lie in [0, 1]");
            }
        }
        if (!(c.thresholds.cv > 0.0) || !(c.thresholds.variance_epsilon >= 0.0)) {
            throw ConfigError("thresholds: cv must be positive and variance_epsilon non-negative");
        }
    }
    if (j.contains("aggregation")) {
        const auto& a = j.at("aggregation");
        check_keys(a, {"method", "convention"}, "aggregation");
        std::string method = "stratified", convention = "rural_share";
        read(a, "method", method, "aggregation");
        read(a, "convention", convention, "aggregation");
        if (method == "stratified") {
            c.aggregation = AggregationMethod::stratified;
        } else if (method == "pixel") {
            c.aggregation = AggregationMethod::pixel;
        } else {
            throw ConfigError("aggregation.method must be 'stratified' or 'pixel'");
        }
        c.convention = parse_strata_convention(convention);
    }
    std::string out = "output";
    read(j, "output_dir", out, "config");
    c.output_dir = fs::path(out).is_relative() ? base_dir / out : fs::path(out);
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    if (!fs::exists(path)) {
        throw ConfigError("config file not found: " + path.string());
    }
    json j;
    try {
        j = json::parse(csv::read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    return parse(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"validate", "direct", "fit", "aggregate", "diagnose", "report"};
    return names;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e)) {
        return 2;
    }
    if (dynamic_cast<const DataError*>(&e)) {
        return 3;
    }
    return 4;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericalError("SHA-256 computation failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model dispatch

ModelOutput fit_model(const ModelRequest& r, const ModelInputs& in, const PriorSettings& priors,
                      const GridSettings& grid, int n_draws, std::uint64_t seed) {
    ModelOutput out;
    out.tag = r.tag;
    out.level = r.level;
    out.type = r.type;
    const AreaStructure* areas = r.level == Level::admin1 ? in.admin1 : in.admin2;
    if (!areas) {
        throw ParameterError("model " + r.tag + ": no area structure for its level");
    }
    if (r.type == ModelType::fay_herriot) {
        const TransformResult* t = r.level == Level::admin1 ? in.fh_admin1 : in.fh_admin2;
        if (!t) {
            throw ParameterError("model " + r.tag + ": no direct estimates for its level");
        }
        FHModelConfig cfg;
        cfg.level = r.level;
        cfg.intercept = r.intercept;
        cfg.spatial = r.spatial;
        if (r.covariates) {
            cfg.covariate_names = in.area_covariate_names;
            cfg.covariates = r.level == Level::admin1 ? in.admin1_covariates : in.admin2_covariates;
        }
        cfg.priors = priors;
        cfg.grid = grid;
        cfg.n_draws = n_draws;
        cfg.seed = seed;
        cfg.model_tag = r.tag;
        if (r.level == Level::admin2) {
            cfg.phantom_areas = in.phantom_areas;
        }
        FHFit fit = fit_fay_herriot(*t, *areas, cfg);
        out.posterior = fit.posterior;
        out.hypergrid = fit.fit.grid.table();
        out.hyper_summary = hyper_summary_table(fit.samples, fit.hyper_names());
        out.loglik = fit.pointwise_loglik();
        out.warnings = fit.warnings;
        return out;
    }
    if (!in.dataset) {
        throw ParameterError("model " + r.tag + ": no survey data");
    }
    ClusterModelConfig cfg;
    cfg.variant = r.variant;
    cfg.level = r.level;
    cfg.use_covariates = r.covariates;
    cfg.priors = priors;
    cfg.grid = grid;
    cfg.n_draws = n_draws;
    cfg.seed = seed;
    cfg.model_tag = r.tag;
    ClusterFit fit = fit_cluster_model(*in.dataset, *areas, cfg);
    out.predictors = fit.predictors;
    out.hypergrid = fit.fit.grid.table();
    out.hyper_summary = hyper_summary_table(fit.samples, fit.hyper_names());
    out.loglik = fit.pointwise_loglik();
    out.warnings = fit.warnings;
    return out;
}

AreaPosterior area_posterior(const ModelOutput& output, const std::vector<UrbanFraction>& q,
                             StrataConvention convention) {
    if (output.posterior) {
        return *output.posterior;
    }
    return aggregate_stratified(*output.predictors, q, convention);
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct Loaded {
    Geography geography;
    PixelTable pixels;
};

Geography load_geo(const RunConfig& c) { return load_geography(c.geography); }

SurveyDataset load_assigned(const StageContext& ctx, const RunConfig& c) {
    const csv::Table t = read_artifact(ctx, "stage1/survey_assigned.csv", "validate");
    return parse_survey(t, canonical_schema(c.schema.covariates));
}

void stage_validate(const RunConfig& c, StageContext& ctx) {
    SurveyDataset ds = load_survey(c.survey, c.schema, &ctx.warnings);
    const Geography geo = load_geo(c);
    AssignmentResult ar = assign_clusters(ds, geo);
    ctx.warnings.append(ar.warnings);
    const auto fractions = load_urban_fractions(c.urban_fractions);
    const ValidationReport rep = validate(ar.dataset, geo, fractions);
    ctx.write_table("stage1/assignment.csv", assignment_table(ar));
    ctx.write_table("stage1/survey_assigned.csv", survey_table(ar.dataset));
    ctx.write_table("stage1/validation_counts.csv", validation_counts_table(rep));
    ctx.write_table("stage1/validation_urban.csv", validation_urban_table(rep));
    ctx.write_text("stage1/validation_summary.txt", validation_summary(rep));
    for (Level l : {Level::admin1, Level::admin2}) {
        ctx.write_text("stage1/adjacency_" + std::string(to_string(l)) + ".txt",
                       adjacency_text(build_adjacency(geo, l, &ctx.warnings)));
    }
    ctx.write_warnings("stage1");
}

void stage_direct(const RunConfig& c, StageContext& ctx) {
    const SurveyDataset ds = load_assigned(ctx, c);
    const Geography geo = load_geo(c);
    const auto ids1 = geo.ids(Level::admin1);
    const auto ids2 = geo.ids(Level::admin2);
    const auto d1 = hajek(ds, Level::admin1, ids1, &ctx.warnings);
    const auto d2 = hajek(ds, Level::admin2, ids2, &ctx.warnings);
    const auto dn = hajek(national_copy(ds), Level::admin1, {"national"});
    ctx.write_table("direct/direct_admin1.csv", direct_table(d1));
    ctx.write_table("direct/direct_admin2.csv", direct_table(d2));
    ctx.write_table("direct/direct_national.csv", direct_table(dn));
    const double eps = c.thresholds.variance_epsilon;
    ctx.write_table("direct/fh_input_admin1.csv", fh_input_table(logit_transform(d1, eps)));
    csv::Table phantoms({"area_id"});
    std::vector<DirectEstimate> d2_aug = d2;
    try {
        const PhantomResult ph = phantom_augment(ds, geo, d1, eps);
        for (const auto& id : ph.augmented_areas) {
            phantoms.add_row({id});
        }
        d2_aug = hajek(ph.dataset, Level::admin2, ids2);
    } catch (const DataError& e) {
        ctx.warnings.add(std::string("phantom augmentation skipped: ") + e.what());
    }
    ctx.write_table("direct/phantom_areas.csv", phantoms);
    ctx.write_table("direct/fh_input_admin2.csv", fh_input_table(logit_transform(d2_aug, eps)));
    ctx.write_warnings("direct");
}

std::vector<ModelRequest> selected_models(const RunConfig& c, const std::vector<std::string>& filter,
                                          std::optional<Level> level) {
    for (const auto& f : filter) {
        if (std::none_of(c.models.begin(), c.models.end(), [&](const ModelRequest& m) { return m.tag == f; })) {
            throw ConfigError("--models: no configured model with tag '" + f + "'");
        }
    }
    std::vector<ModelRequest> out;
    for (const auto& m : c.models) {
        if ((filter.empty() || std::find(filter.begin(), filter.end(), m.tag) != filter.end()) &&
            (!level || m.level == *level)) {
            out.push_back(m);
        }
    }
    return out;
}

void stage_fit(const RunConfig& c, StageContext& ctx, const std::vector<ModelRequest>& models) {
    const Geography geo = load_geo(c);
    SurveyDataset ds = load_assigned(ctx, c);
    const TransformResult t1 = parse_fh_input(read_artifact(ctx, "direct/fh_input_admin1.csv", "direct"));
    const TransformResult t2 = parse_fh_input(read_artifact(ctx, "direct/fh_input_admin2.csv", "direct"));
    const csv::Table ph = read_artifact(ctx, "direct/phantom_areas.csv", "direct");
    ModelInputs in;
    in.dataset = &ds;
    in.fh_admin1 = &t1;
    in.fh_admin2 = &t2;
    for (std::size_t r = 0; r < ph.size(); ++r) {
        in.phantom_areas.push_back(ph.at(r, 0));
    }
    const AreaStructure s1 = AreaStructure::from_geography(geo, Level::admin1);
    const AreaStructure s2 = AreaStructure::from_geography(geo, Level::admin2);
    in.admin1 = &s1;
    in.admin2 = &s2;
    const bool fh_cov = std::any_of(models.begin(), models.end(), [](const ModelRequest& m) {
        return m.type == ModelType::fay_herriot && m.covariates;
    });
    if (fh_cov) {
        const PixelTable px = PixelTable::load(c.pixels);
        in.area_covariate_names = px.covariate_names;
        in.admin1_covariates = area_covariate_means(px, Level::admin1, s1.area_ids());
        in.admin2_covariates = area_covariate_means(px, Level::admin2, s2.area_ids());
    }
    for (const auto& m : models) {
        const ModelOutput out = fit_model(m, in, c.priors, c.grid, c.n_draws,
                                          substream_seed(c.seed, "fit/" + m.tag));
        const std::string dir = "fit/" + m.tag + "/";
        ctx.write_table(dir + "hypergrid.csv", out.hypergrid);
        ctx.write_table(dir + "hyper_summary.csv", out.hyper_summary);
        std::vector<std::string> point_ids;
        for (Eigen::Index k = 0; k < out.loglik.rows(); ++k) {
            point_ids.push_back(std::to_string(k));
        }
        ctx.write_table(dir + "loglik.csv", matrix_table(out.loglik, "point", point_ids));
        if (out.posterior) {
            ctx.write_table(dir + "draws.csv", draws_table(*out.posterior));
            ctx.write_table(dir + "estimates.csv", estimates_table(*out.posterior));
        } else {
            ctx.write_table(dir + "predictor_draws.csv", out.predictors->table());
            ctx.write_text(dir + "predictor_meta.json", out.predictors->metadata_json());
            ctx.write_table(dir + "fixed_effects.csv", fixed_effects_table(*out.predictors));
        }
        ctx.write_text(dir + "model.json", model_json(out, m));
        for (const auto& w : out.warnings) {
            ctx.warnings.add(m.tag + ": " + w);
        }
    }
    ctx.write_warnings("fit");
}

/// Final area posterior of a model at its own level, from fit artifacts.
AreaPosterior load_area_posterior(const StageContext& ctx, const ModelRequest& m) {
    const std::string dir = "fit/" + m.tag + "/";
    if (m.type == ModelType::fay_herriot) {
        return parse_draws_table(read_artifact(ctx, dir + "draws.csv", "fit"), m.level, m.tag);
    }
    throw ParameterError("cluster posteriors need aggregation");
}

void stage_aggregate(const RunConfig& c, StageContext& ctx, const std::vector<ModelRequest>& models) {
    const Geography geo = load_geo(c);
    const PixelTable px = PixelTable::load(c.pixels);
    const UrbanPartition part = urban_thresholds(px, load_urban_fractions(c.urban_fractions));
    csv::Table th({"admin1_id", "target", "threshold", "achieved", "gap", "n_urban"});
    for (const auto& t : part.thresholds) {
        th.add_row({t.admin1_id, csv::format_number(t.target), csv::format_number(t.threshold),
                    csv::format_number(t.achieved), csv::format_number(t.gap()),
                    std::to_string(t.n_urban)});
    }
    ctx.write_table("aggregate/urban_thresholds.csv", th);
    std::map<Level, std::vector<UrbanFraction>> q;
    for (Level l : {Level::admin1, Level::admin2}) {
        q[l] = urban_fractions(part, px, l, geo.ids(l));
        for (const auto& u : q[l]) {
            if (u.flag != "ok") {
                ctx.warnings.add("urban fraction undefined for " + u.area_id);
            }
        }
        ctx.write_table("aggregate/urban_fractions_" + std::string(to_string(l)) + ".csv",
                        urban_fraction_table(q[l]));
    }
    const auto w2 = px.target_population(Level::admin2);
    const auto w1 = px.target_population(Level::admin1);
    for (const auto& m : models) {
        const std::string src = "fit/" + m.tag + "/";
        AreaPosterior post;
        if (m.type == ModelType::fay_herriot) {
            post = load_area_posterior(ctx, m);
        } else {
            const PredictorDraws pd = PredictorDraws::parse(
                read_artifact(ctx, src + "predictor_draws.csv", "fit"),
                read_text_artifact(ctx, src + "predictor_meta.json", "fit"));
            if (c.aggregation == AggregationMethod::pixel) {
                post = aggregate_pixel(pd, px, part, c.convention);
            } else {
                std::vector<Eigen::VectorXd> xs;
                if (pd.standardization.size() > 0) {
                    const Eigen::MatrixXd raw = area_covariate_means(px, m.level, pd.area_ids);
                    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
                        const Eigen::RowVectorXd row = raw.row(i);
                        const std::vector<double> r(row.data(), row.data() + row.size());
                        xs.push_back(pd.standardization.apply(px.covariate_names, r));
                    }
                }
                post = aggregate_stratified(pd, q[m.level], c.convention, xs.empty() ? nullptr : &xs);
            }
        }
        for (const auto& e : post.excluded) {
            ctx.warnings.add(m.tag + ": area " + e.area_id + " excluded (" + e.reason + ")");
        }
        const std::string dir = "aggregate/" + m.tag + "/";
        ctx.write_table(dir + "draws.csv", draws_table(post));
        ctx.write_table(dir + "estimates.csv", estimates_table(post));
        if (m.level == Level::admin2) {
            const AreaPosterior a1 = aggregate_up(post, parent_map(geo, false), w2, Level::admin1);
            ctx.write_table(dir + "admin1_draws.csv", draws_table(a1));
            ctx.write_table(dir + "admin1_estimates.csv", estimates_table(a1));
        }
        const AreaPosterior nat = aggregate_up(post, parent_map(geo, true),
                                               m.level == Level::admin2 ? w2 : w1, Level::admin1);
        ctx.write_table(dir + "national_estimates.csv", estimates_table(nat));
    }
    ctx.write_warnings("aggregate");
}

std::string gate(bool pass, bool fail = false) { return fail ? "fail" : (pass ? "pass" : "warn"); }

void stage_diagnose(const RunConfig& c, StageContext& ctx, const std::vector<ModelRequest>& models) {
    const Geography geo = load_geo(c);
    const PixelTable px = PixelTable::load(c.pixels);
    const auto w2 = px.target_population(Level::admin2);
    const auto w1 = px.target_population(Level::admin1);
    const auto d1 = parse_direct_table(read_artifact(ctx, "direct/direct_admin1.csv", "direct"));
    const auto dn = parse_direct_table(read_artifact(ctx, "direct/direct_national.csv", "direct"));

    std::map<std::string, AreaPosterior> posts;
    for (const auto& m : models) {
        posts[m.tag] = parse_draws_table(read_artifact(ctx, "aggregate/" + m.tag + "/draws.csv", "aggregate"),
                                         m.level, m.tag);
    }
    csv::Table cv, exc, cons;
    std::vector<std::pair<std::string, WaicResult>> waics;
    std::vector<VStatistic> vstats;
    json summary;
    summary["models"] = json::object();
    bool any_fail = false, any_warn = false;

    // Coarse reference for the over-smoothing comparison: first admin1 FH model, else any admin1 model.
    const ModelRequest* coarse = nullptr;
    for (const auto& m : models) {
        if (m.level == Level::admin1 && (!coarse || (m.type == ModelType::fay_herriot &&
                                                     coarse->type != ModelType::fay_herriot))) {
            coarse = &m;
        }
    }
    for (const auto& m : models) {
        const AreaPosterior& p = posts[m.tag];
        json js;
        const auto flags = cv_flags(p, c.thresholds.cv);
        append_rows(cv, cv_table(flags, m.tag));
        const auto usable = std::count_if(flags.begin(), flags.end(), [](const CvFlag& f) { return f.usable; });
        js["cv_usable_share"] = flags.empty() ? 0.0 : static_cast<double>(usable) / flags.size();
        js["cv_gate"] = gate(2 * usable >= static_cast<long>(flags.size()));
        append_rows(exc, exceedance_table(p, c.thresholds.exceedance));

        const Eigen::MatrixXd ll = parse_matrix_table(read_artifact(ctx, "fit/" + m.tag + "/loglik.csv", "fit"));
        const WaicResult w = waic(ll);
        waics.emplace_back(m.tag, w);
        js["waic"] = w.waic;
        js["p_waic"] = w.p_waic;

        const auto nat = consistency_check(p, dn, parent_map(geo, true), m.level == Level::admin2 ? w2 : w1);
        append_rows(cons, consistency_table(nat, m.tag, "national"));
        if (!nat.empty()) {
            js["national_z"] = std::isfinite(nat[0].z) ? json(nat[0].z) : json(nullptr);
            js["national_gate"] = gate(!nat[0].systematic);
            any_warn = any_warn || nat[0].systematic;
        }
        if (m.level == Level::admin2) {
            const auto a1 = consistency_check(p, d1, parent_map(geo, false), w2);
            append_rows(cons, consistency_table(a1, m.tag, "admin1"));
            const auto sys = std::count_if(a1.begin(), a1.end(), [](const ConsistencyRow& r) { return r.systematic; });
            js["admin1_systematic"] = sys;
        }
        const VStatistic v = oversmoothing_v(p);
        vstats.push_back(v);
        js["v_mean"] = v.summary.mean;
        if (m.level == Level::admin2 && coarse) {
            const AreaPosterior rep = replicate_to_children(posts[coarse->tag], p.area_ids, parent_map(geo, false));
            const VComparison cmp = compare_v(p, rep, c.thresholds.v_material_ratio);
            VStatistic cv_rep = cmp.coarse;
            cv_rep.model_tag = coarse->tag + "_replicated_for_" + m.tag;
            vstats.push_back(cv_rep);
            js["v_ratio_to_" + coarse->tag] = cmp.ratio;
            js["oversmoothing_gate"] = gate(!cmp.oversmoothing_likely);
            any_warn = any_warn || cmp.oversmoothing_likely;
        }
        if (!std::isfinite(w.waic)) {
            any_fail = true;
            js["waic_gate"] = "fail";
        }
        summary["models"][m.tag] = js;
    }
    summary["status"] = gate(!any_warn, any_fail);
    summary["cv_threshold"] = c.thresholds.cv;
    summary["exceedance_thresholds"] = c.thresholds.exceedance;
    ctx.write_table("diagnostics/cv.csv", cv);
    ctx.write_table("diagnostics/exceedance.csv", exc);
    ctx.write_table("diagnostics/waic.csv", waic_table(waics));
    ctx.write_table("diagnostics/consistency.csv", cons);
    ctx.write_table("diagnostics/v.csv", v_table(vstats));
    ctx.write_text("diagnostics/summary.json", summary.dump(2) + "\n");
    ctx.write_warnings("diagnostics");
}

void stage_report(const RunConfig& c, StageContext& ctx, const std::vector<ModelRequest>& models) {
    const Geography geo = load_geo(c);
    std::string notes;
    auto optional_table = [&](const std::string& rel) -> std::optional<csv::Table> {
        if (!fs::exists(ctx.path(rel))) {
            notes += "missing " + rel + "\n";
            return std::nullopt;
        }
        return csv::read_file(ctx.path(rel));
    };
    const report::ColorScale scale{0.0, 1.0};
    std::map<Level, std::vector<csv::Table>> by_level;
    const auto exc = optional_table("diagnostics/exceedance.csv");
    for (const auto& m : models) {
        const std::string dir = "aggregate/" + m.tag + "/";
        const auto est = optional_table(dir + "estimates.csv");
        if (!est) {
            notes += "skipped figures for " + m.tag + "\n";
            continue;
        }
        by_level[m.level].push_back(*est);
        ctx.write_text("reports/interval_" + m.tag + ".svg",
                       report::interval_plot(*est, m.tag + ": estimates and 95% intervals"));
        ctx.write_text("reports/map_" + m.tag + ".svg",
                       report::choropleth(geo, m.level, report::column_by_area(*est, "mean"), scale,
                                          m.tag + ": posterior mean prevalence"));
        if (const auto direct = optional_table("direct/direct_" + std::string(to_string(m.level)) + ".csv")) {
            ctx.write_text("reports/scatter_" + m.tag + ".svg",
                           report::scatter(*direct, *est, m.tag + " vs direct"));
        }
        if (const auto draws = optional_table(dir + "draws.csv")) {
            ctx.write_text("reports/ridge_" + m.tag + ".svg",
                           report::ridge(*draws, *est, m.tag + ": posterior distributions"));
        }
        if (exc) {
            for (double t : c.thresholds.exceedance) {
                std::map<std::string, double> at;
                const auto c_t = exc->require("threshold");
                const auto c_id = exc->require("area_id");
                const auto c_m = exc->require("model_tag");
                const auto c_p = exc->require("probability");
                for (std::size_t r = 0; r < exc->size(); ++r) {
                    if (exc->at(r, c_m) == m.tag && exc->at(r, c_t) == csv::format_number(t)) {
                        at[exc->at(r, c_id)] = csv::parse_number(exc->at(r, c_p));
                    }
                }
                ctx.write_text("reports/exceedance_" + m.tag + "_" + csv::format_number(t) + ".svg",
                               report::choropleth(geo, m.level, at, scale,
                                                  m.tag + ": P(prevalence > " + csv::format_number(t) + ")"));
            }
        }
    }
    for (const auto& [level, tables] : by_level) {
        ctx.write_text("reports/overlay_" + std::string(to_string(level)) + ".svg",
                       report::overlay(tables, "Point estimates by model (" + std::string(to_string(level)) + ")"));
    }
    ctx.write_text("reports/notes.txt", notes);
}

}  // namespace

RunResult run_pipeline(const RunConfig& config, const std::vector<std::string>& stages,
                       const std::vector<std::string>& model_filter, std::optional<Level> level_filter) {
    for (const auto& s : stages) {
        const auto& all = stage_names();
        if (std::find(all.begin(), all.end(), s) == all.end()) {
            throw ConfigError("unknown stage '" + s + "'");
        }
    }
    const auto models = selected_models(config, model_filter, level_filter);
    RunResult result;
    const fs::path manifest_path = config.output_dir / "manifest.json";
    json manifest;
    if (!stages.empty() && fs::exists(manifest_path)) {
        try {
            manifest = json::parse(csv::read_text(manifest_path));
        } catch (const json::exception&) {
            manifest = json::object();
        }
    }
    manifest["version"] = kVersion;
    manifest["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION);
    manifest["config"] = config.source;
    manifest["seed"] = config.seed;
    json inputs;
    for (const auto& [name, path] : std::vector<std::pair<std::string, fs::path>>{
             {"survey", config.survey}, {"geography", config.geography},
             {"pixels", config.pixels}, {"urban_fractions", config.urban_fractions}}) {
        inputs[name] = {{"file", path.filename().string()}, {"sha256", sha256_hex(csv::read_text(path))}};
    }
    manifest["inputs"] = inputs;
    if (!manifest.contains("stages") || !manifest["stages"].is_object()) {
        manifest["stages"] = json::object();
    }

    bool halted = false;
    for (const auto& name : stage_names()) {
        StageStatus st;
        st.name = name;
        const bool requested = stages.empty() || std::find(stages.begin(), stages.end(), name) != stages.end();
        if (!requested) {
            continue;
        }
        if (halted) {
            st.status = "skipped";
            st.message = "an earlier stage failed";
            result.stages.push_back(st);
            manifest["stages"][name] = {{"status", st.status}, {"message", st.message}, {"artifacts", json::object()}};
            continue;
        }
        StageContext ctx;
        ctx.out = config.output_dir;
        try {
            if (name == "validate") stage_validate(config, ctx);
            else if (name == "direct") stage_direct(config, ctx);
            else if (name == "fit") stage_fit(config, ctx, models);
            else if (name == "aggregate") stage_aggregate(config, ctx, models);
            else if (name == "diagnose") stage_diagnose(config, ctx, models);
            else stage_report(config, ctx, models);
            st.status = "ok";
        } catch (const std::exception& e) {
            st.status = "failed";
            st.message = e.what();
            result.exit_code = exit_code_for(e);
            halted = true;
        }
        json arts = json::object();
        for (const auto& [rel, hash] : ctx.artifacts) {
            arts[rel] = hash;
        }
        manifest["stages"][name] = {{"status", st.status}, {"message", st.message}, {"artifacts", arts}};
        result.stages.push_back(st);
    }
    csv::write_text_atomic(manifest_path, manifest.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------
// Scenarios

Scenario Scenario::parse(const json& j) {
    const std::string w = "scenario";
    check_keys(j, {"name", "seed", "replicates", "geography", "population", "design", "models", "priors",
                   "grid", "n_draws", "variance_epsilon"},
               w);
    Scenario s;
    read(j, "name", s.name, w);
    s.seed = read_seed(j, w);
    read(j, "replicates", s.replicates, w);
    read(j, "n_draws", s.n_draws, w);
    read(j, "variance_epsilon", s.variance_epsilon, w);
    if (s.replicates < 2) {
        throw ConfigError("scenario.replicates must be at least 2");
    }
    if (s.n_draws < 2) {
        throw ConfigError("scenario.n_draws must be at least 2");
    }
    if (j.contains("geography")) {
        const auto& g = j.at("geography");
        check_keys(g, {"n_admin1", "admin2_per_admin1"}, "geography");
        read(g, "n_admin1", s.n_admin1, "geography");
        read(g, "admin2_per_admin1", s.admin2_per_admin1, "geography");
    }
    if (j.contains("population")) {
        const auto& p = j.at("population");
        const std::string pw = "population";
        check_keys(p, {"eas_per_admin2", "alpha", "admin1_sd", "gamma", "sigma", "phi", "overdispersion",
                       "beta", "covariate", "urban_share_min", "urban_share_max", "urban_households_min",
                       "urban_households_max", "rural_households_min", "rural_households_max",
                       "people_per_household"},
                   pw);
        auto& pp = s.population;
        read(p, "eas_per_admin2", pp.eas_per_admin2, pw);
        read(p, "alpha", pp.alpha, pw);
        read(p, "admin1_sd", pp.admin1_sd, pw);
        read(p, "gamma", pp.gamma, pw);
        read(p, "sigma", pp.sigma, pw);
        read(p, "phi", pp.phi, pw);
        read(p, "overdispersion", pp.overdispersion, pw);
        read(p, "beta", pp.beta, pw);
        read(p, "covariate", pp.covariate, pw);
        read(p, "urban_share_min", pp.urban_share_min, pw);
        read(p, "urban_share_max", pp.urban_share_max, pw);
        read(p, "urban_households_min", pp.urban_households_min, pw);
        read(p, "urban_households_max", pp.urban_households_max, pw);
        read(p, "rural_households_min", pp.rural_households_min, pw);
        read(p, "rural_households_max", pp.rural_households_max, pw);
        read(p, "people_per_household", pp.people_per_household, pw);
        try {
            pp.check();
        } catch (const ParameterError& e) {
            throw ConfigError(e.what());
        }
    }
    if (j.contains("design")) {
        const auto& d = j.at("design");
        const std::string dw = "design";
        check_keys(d, {"clusters_per_admin1", "urban_oversampling", "max_urban_share",
                       "households_per_cluster", "clusters_per_stratum"},
                   dw);
        read(d, "clusters_per_admin1", s.design.clusters_per_admin1, dw);
        read(d, "urban_oversampling", s.design.urban_oversampling, dw);
        read(d, "max_urban_share", s.design.max_urban_share, dw);
        read(d, "households_per_cluster", s.design.households_per_cluster, dw);
        read(d, "clusters_per_stratum", s.design.clusters_per_stratum, dw);
        try {
            s.design.check();
        } catch (const ParameterError& e) {
            throw ConfigError(e.what());
        }
    }
    if (j.contains("models")) {
        s.models = parse_models(j.at("models"));
    }
    if (j.contains("priors")) {
        s.priors = parse_priors(j.at("priors"));
    }
    if (j.contains("grid")) {
        s.grid = parse_grid(j.at("grid"));
    }
    return s;
}

namespace {

std::vector<sim::IntervalEstimate> interval_estimates(const AreaPosterior& p,
                                                      const std::vector<std::string>& ids) {
    const auto sums = p.summaries();
    std::vector<sim::IntervalEstimate> out;
    for (const auto& id : ids) {
        sim::IntervalEstimate e;
        e.area_id = id;
        if (const auto k = p.index_of(id)) {
            const auto& s = sums[static_cast<std::size_t>(*k)];
            e.estimate = s.mean;
            e.lower = s.lower95;
            e.upper = s.upper95;
        }
        out.push_back(e);
    }
    return out;
}

sim::IntervalEstimate direct_interval(const DirectEstimate& d) {
    return {d.area_id, d.p_hat, d.ci_lower(), d.ci_upper()};
}

}  // namespace

ScenarioResult run_scenario(const Scenario& s) {
    ScenarioResult res;
    const Geography geo = sim::grid_geography(s.n_admin1, s.admin2_per_admin1);
    res.population = sim::gen_population(s.population, geo, substream_seed(s.seed, "population"));
    const auto& pop = res.population;
    const auto ids1 = geo.ids(Level::admin1);
    const auto ids2 = geo.ids(Level::admin2);
    const AreaStructure s1 = AreaStructure::from_geography(geo, Level::admin1);
    const AreaStructure s2 = AreaStructure::from_geography(geo, Level::admin2);
    const auto q2 = pop.true_urban_fractions(Level::admin2);
    const auto q1 = pop.true_urban_fractions(Level::admin1);
    std::map<std::string, double> w1;
    for (const auto& [id, h] : pop.admin2_households) {
        w1[geo.areas(Level::admin1)[geo.parent_index()[geo.require_index(Level::admin2, id)]].id] += h;
    }
    const auto national_parent = parent_map(geo, true);

    for (int rep = 0; rep < s.replicates; ++rep) {
        const std::uint64_t rs = substream_seed(s.seed, static_cast<std::uint64_t>(rep));
        const SurveyDataset ds = sim::draw_sample(pop, s.design, rs);
        const auto d1 = hajek(ds, Level::admin1, ids1);
        const auto d2 = hajek(ds, Level::admin2, ids2);
        const auto dn = hajek(national_copy(ds), Level::admin1, {"national"});
        std::vector<sim::IntervalEstimate> de;
        for (const auto& d : d2) {
            de.push_back(direct_interval(d));
        }
        res.admin2["direct"].push_back(de);
        auto nd = direct_interval(dn[0]);
        nd.area_id = "national";
        res.national["direct"].push_back(nd);

        const TransformResult t1 = logit_transform(d1, s.variance_epsilon);
        TransformResult t2;
        ModelInputs in;
        in.dataset = &ds;
        in.fh_admin1 = &t1;
        in.admin1 = &s1;
        in.admin2 = &s2;
        if (std::any_of(s.models.begin(), s.models.end(), [](const ModelRequest& m) {
                return m.type == ModelType::fay_herriot && m.level == Level::admin2;
            })) {
            const PhantomResult ph = phantom_augment(ds, geo, d1, s.variance_epsilon);
            t2 = logit_transform(hajek(ph.dataset, Level::admin2, ids2), s.variance_epsilon);
            in.phantom_areas = ph.augmented_areas;
        }
        in.fh_admin2 = &t2;
        for (const auto& m : s.models) {
            const ModelOutput out = fit_model(m, in, s.priors, s.grid, s.n_draws,
                                              substream_seed(rs, "fit/" + m.tag));
            const AreaPosterior post = area_posterior(out, m.level == Level::admin1 ? q1 : q2,
                                                      StrataConvention::rural_share);
            if (m.level == Level::admin2) {
                res.admin2[m.tag].push_back(interval_estimates(post, ids2));
            }
            const AreaPosterior nat = aggregate_up(post, national_parent,
                                                   m.level == Level::admin2 ? pop.admin2_households : w1,
                                                   Level::admin1);
            res.national[m.tag].push_back(interval_estimates(nat, {"national"})[0]);
            if (rep == 0) {
                for (const auto& w : out.warnings) {
                    res.warnings.push_back(m.tag + ": " + w);
                }
            }
        }
    }
    return res;
}

void write_scenario_outputs(const ScenarioResult& r, const fs::path& out_dir) {
    csv::Table metrics;
    for (const auto& [tag, reps] : r.admin2) {
        append_rows(metrics, sim::metrics_table(sim::evaluate(reps, r.population.admin2_truth), tag));
    }
    const std::map<std::string, double> nat_truth{{"national", r.population.national_truth}};
    csv::Table reps({"model_tag", "replicate", "estimate", "lower95", "upper95", "truth"});
    for (const auto& [tag, est] : r.national) {
        std::vector<std::vector<sim::IntervalEstimate>> wrapped;
        for (std::size_t k = 0; k < est.size(); ++k) {
            wrapped.push_back({est[k]});
            reps.add_row({tag, std::to_string(k), csv::format_number(est[k].estimate),
                          csv::format_number(est[k].lower), csv::format_number(est[k].upper),
                          csv::format_number(r.population.national_truth)});
        }
        append_rows(metrics, sim::metrics_table(sim::evaluate(wrapped, nat_truth), tag));
    }
    csv::write_file(out_dir / "metrics.csv", metrics);
    csv::write_file(out_dir / "national_replicates.csv", reps);
    std::string w;
    for (const auto& m : r.warnings) {
        w += m + "\n";
    }
    csv::write_text_atomic(out_dir / "warnings.txt", w);
}

}  // namespace prevmap
