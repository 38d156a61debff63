#include "prevmap/models.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <numeric>

namespace prevmap {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Area structure and standardization

std::optional<int> AreaStructure::index_of(const std::string& id) const {
    const auto& ids = area_ids();
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it != ids.end() && *it == id) {
        return static_cast<int>(it - ids.begin());
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == id) {
            return static_cast<int>(i);
        }
    }
    return std::nullopt;
}

AreaStructure AreaStructure::from_geography(const Geography& geography, Level level,
                                            Warnings* warnings) {
    AreaStructure s;
    s.level = level;
    s.icar = std::make_shared<const ScaledIcar>(
        scale_icar(build_adjacency(geography, level, warnings)));
    s.admin1_ids = geography.ids(Level::admin1);
    const auto& ids = s.icar->graph.ids;
    s.parent.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::size_t gi = geography.require_index(level, ids[i]);
        s.parent[i] = level == Level::admin1 ? static_cast<int>(gi)
                                             : static_cast<int>(geography.parent_index()[gi]);
    }
    return s;
}

Standardization Standardization::fit(const std::vector<std::string>& names,
                                     const Eigen::MatrixXd& x, std::vector<std::string>* dropped) {
    Standardization s;
    const Eigen::Index n = x.rows();
    for (std::size_t j = 0; j < names.size(); ++j) {
        const Eigen::VectorXd col = x.col(static_cast<Eigen::Index>(j));
        const double mean = n > 0 ? col.mean() : 0.0;
        const double var =
            n > 1 ? (col.array() - mean).square().sum() / static_cast<double>(n - 1) : 0.0;
        const double sd = std::sqrt(var);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            if (dropped) {
                dropped->push_back(names[j]);
            }
            continue;
        }
        s.names.push_back(names[j]);
        s.means.push_back(mean);
        s.sds.push_back(sd);
    }
    return s;
}

Eigen::VectorXd Standardization::apply(const std::vector<std::string>& raw_names,
                                       const std::vector<double>& raw) const {
    Eigen::VectorXd out(size());
    for (int j = 0; j < size(); ++j) {
        auto it = std::find(raw_names.begin(), raw_names.end(), names[j]);
        if (it == raw_names.end()) {
            throw DataError("missing covariate '" + names[j] + "'");
        }
        const double v = raw[static_cast<std::size_t>(it - raw_names.begin())];
        if (!std::isfinite(v)) {
            throw DataError("covariate '" + names[j] + "' is missing");
        }
        out[j] = (v - means[j]) / sds[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Summaries

double quantile(std::vector<double> values, double prob) {
    if (values.empty()) {
        return kNaN;
    }
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SummaryStats summarize(const Eigen::Ref<const Eigen::VectorXd>& draws) {
    SummaryStats s;
    const Eigen::Index n = draws.size();
    if (n == 0) {
        return s;
    }
    s.mean = draws.mean();
    s.sd = n > 1 ? std::sqrt((draws.array() - s.mean).square().sum() / static_cast<double>(n - 1))
                 : 0.0;
    std::vector<double> v(draws.data(), draws.data() + n);
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double h = (static_cast<double>(n) - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min<std::size_t>(lo + 1, v.size() - 1);
        return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    s.median = q(0.5);
    s.lower95 = q(0.025);
    s.upper95 = q(0.975);
    s.cv = s.mean != 0.0 ? s.sd / s.mean : kNaN;
    return s;
}

std::vector<SummaryStats> AreaPosterior::summaries() const {
    std::vector<SummaryStats> out;
    out.reserve(area_ids.size());
    for (Eigen::Index i = 0; i < draws.rows(); ++i) {
        out.push_back(summarize(draws.row(i).transpose()));
    }
    return out;
}

std::optional<int> AreaPosterior::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < area_ids.size(); ++i) {
        if (area_ids[i] == id) {
            return static_cast<int>(i);
        }
    }
    return std::nullopt;
}

csv::Table estimates_table(const AreaPosterior& posterior) {
    csv::Table t({"area_id", "level", "model_tag", "mean", "median", "lower95", "upper95", "sd",
                  "cv", "flag"});
    const auto sums = posterior.summaries();
    for (std::size_t i = 0; i < posterior.area_ids.size(); ++i) {
        const auto& s = sums[i];
        t.add_row({posterior.area_ids[i], std::string(to_string(posterior.level)),
                   posterior.model_tag, csv::format_number(s.mean), csv::format_number(s.median),
                   csv::format_number(s.lower95), csv::format_number(s.upper95),
                   csv::format_number(s.sd), csv::format_number(s.cv),
                   i < posterior.flags.size() ? posterior.flags[i] : "ok"});
    }
    for (const auto& e : posterior.excluded) {
        t.add_row({e.area_id, std::string(to_string(posterior.level)), posterior.model_tag, "NA",
                   "NA", "NA", "NA", "NA", "NA", e.reason});
    }
    return t;
}

csv::Table draws_table(const AreaPosterior& posterior) {
    std::vector<std::string> header{"area_id", "flag"};
    for (Eigen::Index k = 0; k < posterior.draws.cols(); ++k) {
        header.push_back("d" + std::to_string(k));
    }
    csv::Table t(header);
    for (std::size_t i = 0; i < posterior.area_ids.size(); ++i) {
        std::vector<std::string> row{posterior.area_ids[i],
                                     i < posterior.flags.size() ? posterior.flags[i] : "ok"};
        for (Eigen::Index k = 0; k < posterior.draws.cols(); ++k) {
            row.push_back(csv::format_number(posterior.draws(static_cast<Eigen::Index>(i), k)));
        }
        t.add_row(std::move(row));
    }
    return t;
}

AreaPosterior parse_draws_table(const csv::Table& table, Level level, std::string model_tag) {
    AreaPosterior p;
    p.level = level;
    p.model_tag = std::move(model_tag);
    const auto c_id = table.require("area_id");
    const auto c_flag = table.require("flag");
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < table.header().size(); ++j) {
        if (j != c_id && j != c_flag) {
            cols.push_back(j);
        }
    }
    p.draws.resize(static_cast<Eigen::Index>(table.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < table.size(); ++r) {
        p.area_ids.push_back(table.at(r, c_id));
        p.flags.push_back(table.at(r, c_flag));
        for (std::size_t k = 0; k < cols.size(); ++k) {
            p.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
                csv::parse_number(table.at(r, cols[k]));
        }
    }
    return p;
}

csv::Table hyper_summary_table(const lgm::PosteriorSamples& samples,
                               const std::vector<std::string>& present) {
    csv::Table t({"name", "mean", "median", "sd", "lower95", "upper95"});
    for (const auto& name : present) {
        Eigen::VectorXd v(samples.n_draws());
        for (int k = 0; k < samples.n_draws(); ++k) {
            const auto& h = samples.hyper[static_cast<std::size_t>(k)];
            v[k] = name == "sigma" ? h.sigma
                   : name == "phi" ? h.phi
                   : name == "d"   ? h.overdispersion
                                   : h.iid_sigma;
        }
        const auto s = summarize(v);
        t.add_row({name, csv::format_number(s.mean), csv::format_number(s.median),
                   csv::format_number(s.sd), csv::format_number(s.lower95),
                   csv::format_number(s.upper95)});
    }
    return t;
}

// ---------------------------------------------------------------------------
// Grids

lgm::GridSpec make_grid(const lgm::LatentModelSpec& spec, const PriorSettings& priors,
                        const GridSettings& grid, bool laplace) {
    lgm::GridSpec gs;
    if (spec.bym2) {
        gs.sigma = grid.fixed_sigma
                       ? lgm::fixed_axis("sigma", *grid.fixed_sigma)
                       : lgm::sigma_axis(PcPriorSigma(priors.sigma_u, priors.sigma_alpha),
                                         grid.sigma_points);
        if (grid.fixed_phi) {
            gs.phi = lgm::fixed_axis("phi", *grid.fixed_phi);
        } else if (spec.bym2->n_spatial == 0) {
            gs.phi = lgm::fixed_axis("phi", 0.0);
        } else {
            gs.phi = lgm::phi_axis(PcPriorPhi(*spec.bym2, priors.phi_u, priors.phi_alpha),
                                   grid.phi_points);
        }
    }
    if (spec.likelihood == lgm::Likelihood::beta_binomial) {
        gs.overdispersion = grid.fixed_d ? lgm::fixed_axis("d", *grid.fixed_d)
                                         : lgm::overdispersion_axis(grid.d_points, grid.d_min,
                                                                    grid.d_max);
    }
    if (spec.iid_size > 0) {
        gs.iid_sigma = grid.fixed_iid_sigma
                           ? lgm::fixed_axis("iid_sigma", *grid.fixed_iid_sigma)
                           : lgm::sigma_axis(PcPriorSigma(priors.iid_sigma_u, priors.iid_sigma_alpha),
                                             grid.iid_points, "iid_sigma");
    }
    gs.prune_log_drop = laplace ? grid.prune_log_drop : kInf;
    return gs;
}

// ---------------------------------------------------------------------------
// Fay-Herriot

Eigen::MatrixXd FHFit::pointwise_loglik() const {
    const auto& g = std::get<lgm::GaussianData>(fit.data);
    Eigen::MatrixXd ll(static_cast<Eigen::Index>(observed_area.size()), theta.cols());
    for (std::size_t k = 0; k < observed_area.size(); ++k) {
        for (Eigen::Index s = 0; s < theta.cols(); ++s) {
            const auto kk = static_cast<Eigen::Index>(k);
            ll(kk, s) = lgm::gaussian_term(g.value[kk], g.variance[kk], theta(observed_area[k], s))
                            .value;
        }
    }
    return ll;
}

std::vector<std::string> FHFit::hyper_names() const {
    return {"sigma", "phi"};
}

FHFit fit_fay_herriot(const TransformResult& transformed, const AreaStructure& areas,
                      const FHModelConfig& config) {
    if (!areas.icar) {
        throw ParameterError("Fay-Herriot fit needs an area structure");
    }
    const int m = areas.size();
    FHFit out;
    std::vector<double> value, variance;
    for (const auto& e : transformed.estimates) {
        const auto idx = areas.index_of(e.area_id);
        if (!idx) {
            throw DataError("direct estimate for unknown area '" + e.area_id + "'");
        }
        out.observed_area.push_back(*idx);
        value.push_back(e.theta_hat);
        variance.push_back(e.v_hat);
    }
    const int n_obs = static_cast<int>(value.size());
    const int p_raw = static_cast<int>(config.covariate_names.size());
    if (n_obs < 2 && (config.intercept || p_raw > 0)) {
        throw DataError("Fay-Herriot model needs at least 2 usable areas, got " +
                        std::to_string(n_obs));
    }
    if (n_obs == 0) {
        throw DataError("Fay-Herriot model has no usable direct estimates");
    }
    if (p_raw > 0 && config.covariates.rows() != m) {
        throw ParameterError("covariate matrix needs one row per area");
    }
    Eigen::MatrixXd x_obs(n_obs, p_raw);
    for (int k = 0; k < n_obs; ++k) {
        if (p_raw > 0) {
            x_obs.row(k) = config.covariates.row(out.observed_area[k]);
        }
    }
    out.standardization = Standardization::fit(config.covariate_names, x_obs,
                                               &out.dropped_covariates);
    const int p = out.standardization.size();
    Eigen::MatrixXd x_std(m, p);
    for (int i = 0; i < m && p > 0; ++i) {
        std::vector<double> raw(static_cast<std::size_t>(p_raw));
        for (int j = 0; j < p_raw; ++j) {
            raw[j] = config.covariates(i, j);
        }
        x_std.row(i) = out.standardization.apply(config.covariate_names, raw).transpose();
    }
    for (const auto& d : out.dropped_covariates) {
        out.warnings.push_back("covariate '" + d + "' is constant and was dropped");
    }

    lgm::LatentModelSpec spec;
    spec.likelihood = lgm::Likelihood::gaussian_known_variance;
    if (config.intercept) {
        spec.fixed.push_back({"alpha", 1, config.priors.intercept_precision});
    }
    if (p > 0) {
        spec.fixed.push_back({"beta", p, config.priors.covariate_precision});
    }
    spec.bym2 = areas.icar;
    const int a0 = 0;
    const int b0 = config.intercept ? 1 : 0;
    const int u0 = spec.bym2_offset();
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < n_obs; ++k) {
        const int i = out.observed_area[k];
        if (config.intercept) {
            trip.emplace_back(k, a0, 1.0);
        }
        for (int j = 0; j < p; ++j) {
            trip.emplace_back(k, b0 + j, x_std(i, j));
        }
        trip.emplace_back(k, u0 + i, 1.0);
    }
    spec.design.resize(n_obs, spec.dim());
    spec.design.setFromTriplets(trip.begin(), trip.end());

    GridSettings gset = config.grid;
    if (!config.spatial) {
        gset.fixed_phi = 0.0;
    }
    const lgm::GridSpec gs = make_grid(spec, config.priors, gset, false);
    lgm::GaussianData data{Eigen::Map<const Eigen::VectorXd>(value.data(), n_obs),
                           Eigen::Map<const Eigen::VectorXd>(variance.data(), n_obs)};
    out.fit = lgm::fit_gaussian_lgm(std::move(spec), std::move(data), gs);
    for (const auto& w : out.fit.grid.warnings) {
        out.warnings.push_back(w);
    }
    out.samples = lgm::sample_posterior(out.fit, config.n_draws, config.seed);

    const Eigen::MatrixXd& lat = out.samples.latent;
    out.theta.resize(m, lat.cols());
    for (int i = 0; i < m; ++i) {
        Eigen::RowVectorXd t = lat.row(u0 + i);
        if (config.intercept) {
            t += lat.row(a0);
        }
        for (int j = 0; j < p; ++j) {
            t += x_std(i, j) * lat.row(b0 + j);
        }
        out.theta.row(i) = t;
    }
    auto& post = out.posterior;
    post.level = config.level;
    post.model_tag = config.model_tag;
    post.area_ids = areas.area_ids();
    post.draws = out.theta.unaryExpr([](double v) { return expit(v); });
    post.flags.assign(static_cast<std::size_t>(m), "predicted");
    for (int i : out.observed_area) {
        post.flags[static_cast<std::size_t>(i)] = "observed";
    }
    for (const auto& id : config.phantom_areas) {
        if (auto idx = areas.index_of(id)) {
            post.flags[static_cast<std::size_t>(*idx)] = "phantom";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cluster models

std::string_view to_string(ClusterVariant v) {
    switch (v) {
    case ClusterVariant::unstratified: return "unstratified";
    case ClusterVariant::nested_unstratified: return "nested_unstratified";
    case ClusterVariant::stratified_nonnested: return "stratified_nonnested";
    case ClusterVariant::stratified_nested: return "stratified_nested";
    case ClusterVariant::stratified_nested_interaction: return "stratified_nested_interaction";
    }
    return "unknown";
}

ClusterVariant parse_cluster_variant(std::string_view s) {
    for (ClusterVariant v :
         {ClusterVariant::unstratified, ClusterVariant::nested_unstratified,
          ClusterVariant::stratified_nonnested, ClusterVariant::stratified_nested,
          ClusterVariant::stratified_nested_interaction}) {
        if (s == to_string(v)) {
            return v;
        }
    }
    throw ConfigError("unknown cluster model variant '" + std::string(s) + "'");
}

bool is_nested(ClusterVariant v) {
    return v == ClusterVariant::nested_unstratified || v == ClusterVariant::stratified_nested ||
           v == ClusterVariant::stratified_nested_interaction;
}

bool is_stratified(ClusterVariant v) {
    return v == ClusterVariant::stratified_nonnested || v == ClusterVariant::stratified_nested ||
           v == ClusterVariant::stratified_nested_interaction;
}

Eigen::VectorXd PredictorDraws::eta(int area, Urbanicity stratum, const Eigen::VectorXd* x) const {
    const int a = parent[static_cast<std::size_t>(area)];
    Eigen::VectorXd e = u.row(area).transpose();
    e += alpha.row(alpha.rows() == 1 ? 0 : a).transpose();
    if (stratum == Urbanicity::rural && gamma.rows() > 0) {
        e += gamma.row(gamma.rows() == 1 ? 0 : a).transpose();
    }
    if (delta.rows() > 0) {
        e += delta.row(a).transpose();
    }
    if (x && beta.rows() > 0) {
        e += beta.transpose() * (*x);
    }
    return e;
}

AreaPosterior PredictorDraws::area_prevalence(std::optional<Urbanicity> stratum) const {
    if (!stratum && is_stratified(variant)) {
        throw ParameterError("stratified predictors need urban fractions for area prevalence");
    }
    AreaPosterior p;
    p.level = level;
    p.model_tag = model_tag;
    p.area_ids = area_ids;
    p.draws.resize(static_cast<Eigen::Index>(area_ids.size()), n_draws());
    for (std::size_t i = 0; i < area_ids.size(); ++i) {
        const Eigen::VectorXd e = eta(static_cast<int>(i), stratum.value_or(Urbanicity::urban));
        p.draws.row(static_cast<Eigen::Index>(i)) =
            e.unaryExpr([](double v) { return expit(v); }).transpose();
        p.flags.push_back(area_clusters[i] > 0 ? "observed" : "predicted");
    }
    return p;
}

namespace {

void append_rows(csv::Table& t, const std::string& component, const std::vector<std::string>& ids,
                 const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<std::string> row{component, ids[static_cast<std::size_t>(r)]};
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            row.push_back(csv::format_number(m(r, k)));
        }
        t.add_row(std::move(row));
    }
}

}  // namespace

csv::Table PredictorDraws::table() const {
    std::vector<std::string> header{"component", "index"};
    for (int k = 0; k < n_draws(); ++k) {
        header.push_back("d" + std::to_string(k));
    }
    csv::Table t(header);
    const std::vector<std::string> all{"all"};
    append_rows(t, "alpha", alpha.rows() == 1 ? all : admin1_ids, alpha);
    append_rows(t, "gamma", gamma.rows() == 1 ? all : admin1_ids, gamma);
    append_rows(t, "beta", standardization.names, beta);
    append_rows(t, "u", area_ids, u);
    append_rows(t, "delta", admin1_ids, delta);
    return t;
}

std::string PredictorDraws::metadata_json() const {
    json j;
    j["variant"] = std::string(to_string(variant));
    j["level"] = std::string(to_string(level));
    j["model_tag"] = model_tag;
    j["area_ids"] = area_ids;
    j["parent"] = parent;
    j["admin1_ids"] = admin1_ids;
    j["area_clusters"] = area_clusters;
    j["alpha_rows"] = alpha.rows();
    j["gamma_rows"] = gamma.rows();
    j["standardization"] = {{"names", standardization.names},
                            {"means", standardization.means},
                            {"sds", standardization.sds}};
    return j.dump(2) + "\n";
}

PredictorDraws PredictorDraws::parse(const csv::Table& table, const std::string& metadata) {
    PredictorDraws p;
    json j;
    try {
        j = json::parse(metadata);
        p.variant = parse_cluster_variant(j.at("variant").get<std::string>());
        p.level = parse_level(j.at("level").get<std::string>());
        p.model_tag = j.at("model_tag").get<std::string>();
        p.area_ids = j.at("area_ids").get<std::vector<std::string>>();
        p.parent = j.at("parent").get<std::vector<int>>();
        p.admin1_ids = j.at("admin1_ids").get<std::vector<std::string>>();
        p.area_clusters = j.at("area_clusters").get<std::vector<int>>();
        const auto& s = j.at("standardization");
        p.standardization.names = s.at("names").get<std::vector<std::string>>();
        p.standardization.means = s.at("means").get<std::vector<double>>();
        p.standardization.sds = s.at("sds").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed predictor metadata: ") + e.what());
    }
    const auto c_comp = table.require("component");
    table.require("index");
    const int n_draws = static_cast<int>(table.header().size()) - 2;
    std::map<std::string, std::vector<std::vector<double>>> rows;
    for (std::size_t r = 0; r < table.size(); ++r) {
        std::vector<double> v(static_cast<std::size_t>(n_draws));
        for (int k = 0; k < n_draws; ++k) {
            v[static_cast<std::size_t>(k)] = csv::parse_number(table.at(r, static_cast<std::size_t>(k) + 2));
        }
        rows[table.at(r, c_comp)].push_back(std::move(v));
    }
    auto build = [&](const std::string& name) {
        const auto& rs = rows[name];
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rs.size()), n_draws);
        for (std::size_t r = 0; r < rs.size(); ++r) {
            for (int k = 0; k < n_draws; ++k) {
                m(static_cast<Eigen::Index>(r), k) = rs[r][static_cast<std::size_t>(k)];
            }
        }
        return m;
    };
    p.alpha = build("alpha");
    p.gamma = build("gamma");
    p.beta = build("beta");
    p.u = build("u");
    p.delta = build("delta");
    if (p.u.rows() != static_cast<Eigen::Index>(p.area_ids.size()) ||
        p.beta.rows() != p.standardization.size() || p.alpha.rows() == 0) {
        throw DataError("predictor draw table does not match its metadata");
    }
    return p;
}

Eigen::MatrixXd ClusterFit::pointwise_loglik() const {
    const auto& b = std::get<lgm::BinomialData>(fit.data);
    const Eigen::MatrixXd eta = fit.spec.design * samples.latent;
    Eigen::MatrixXd ll(eta.rows(), eta.cols());
    for (Eigen::Index s = 0; s < eta.cols(); ++s) {
        const double d = samples.hyper[static_cast<std::size_t>(s)].overdispersion;
        for (Eigen::Index c = 0; c < eta.rows(); ++c) {
            ll(c, s) = lgm::betabinom_eta_term(b.successes[static_cast<std::size_t>(c)],
                                               b.trials[static_cast<std::size_t>(c)], eta(c, s), d)
                           .value;
        }
    }
    return ll;
}

std::vector<std::string> ClusterFit::hyper_names() const {
    std::vector<std::string> n{"sigma", "phi", "d"};
    if (config.variant == ClusterVariant::stratified_nested_interaction) {
        n.push_back("iid_sigma");
    }
    return n;
}

ClusterFit fit_cluster_model(const SurveyDataset& dataset, const AreaStructure& areas,
                             const ClusterModelConfig& config) {
    if (!areas.icar) {
        throw ParameterError("cluster model needs an area structure");
    }
    const ClusterVariant v = config.variant;
    if (is_nested(v) && areas.level == Level::admin1) {
        throw ConfigError("variant " + std::string(to_string(v)) +
                          " nests admin1 effects and needs admin2-level random effects");
    }
    ClusterFit out;
    out.config = config;
    if (out.config.model_tag.empty()) {
        out.config.model_tag = std::string(to_string(v));
    }
    const int m = areas.size();
    const int n_admin1 = static_cast<int>(areas.admin1_ids.size());

    std::vector<const Cluster*> used;
    std::vector<int> area_of;
    int skipped = 0;
    for (const auto& c : dataset.clusters) {
        if (c.phantom) {
            continue;
        }
        const auto idx = areas.index_of(dataset.area_of(c, areas.level));
        if (!idx) {
            ++skipped;
            continue;
        }
        used.push_back(&c);
        area_of.push_back(*idx);
    }
    if (skipped > 0) {
        out.warnings.push_back(std::to_string(skipped) +
                               " cluster(s) without a model-level area were left out");
    }
    if (used.empty()) {
        throw DataError("cluster model has no clusters");
    }
    const int n = static_cast<int>(used.size());

    if (is_stratified(v)) {
        std::vector<int> urban(static_cast<std::size_t>(n_admin1), 0);
        std::vector<int> rural(static_cast<std::size_t>(n_admin1), 0);
        for (int c = 0; c < n; ++c) {
            const int a = areas.parent[static_cast<std::size_t>(area_of[c])];
            (used[c]->urbanicity == Urbanicity::urban ? urban : rural)[static_cast<std::size_t>(a)]++;
        }
        const int tu = std::accumulate(urban.begin(), urban.end(), 0);
        const int tr = std::accumulate(rural.begin(), rural.end(), 0);
        if (tu == 0 || tr == 0) {
            throw DataError("variant " + std::string(to_string(v)) +
                            " needs both urban and rural clusters; found no " +
                            (tu == 0 ? "urban" : "rural") + " clusters");
        }
        for (int a = 0; a < n_admin1; ++a) {
            const auto aa = static_cast<std::size_t>(a);
            if (urban[aa] + rural[aa] > 0 && (urban[aa] == 0 || rural[aa] == 0)) {
                out.warnings.push_back("admin1 " + areas.admin1_ids[aa] + " has no " +
                                       (urban[aa] == 0 ? "urban" : "rural") +
                                       " clusters; its stratum contrast is prior-dominated");
            }
        }
    }
    if (is_nested(v)) {
        std::vector<int> count(static_cast<std::size_t>(n_admin1), 0);
        for (int c = 0; c < n; ++c) {
            count[static_cast<std::size_t>(areas.parent[static_cast<std::size_t>(area_of[c])])]++;
        }
        for (int a = 0; a < n_admin1; ++a) {
            if (count[static_cast<std::size_t>(a)] == 0) {
                out.warnings.push_back("admin1 " + areas.admin1_ids[static_cast<std::size_t>(a)] +
                                       " has no clusters; its intercept is prior-dominated");
            }
        }
    }

    // Covariates
    Standardization stdz;
    if (config.use_covariates && !dataset.covariate_names.empty()) {
        const int p_raw = static_cast<int>(dataset.covariate_names.size());
        Eigen::MatrixXd x(n, p_raw);
        for (int c = 0; c < n; ++c) {
            const auto cov = used[c]->covariates();
            for (int j = 0; j < p_raw; ++j) {
                x(c, j) = cov[static_cast<std::size_t>(j)];
            }
        }
        stdz = Standardization::fit(dataset.covariate_names, x, &out.dropped_covariates);
        for (const auto& d : out.dropped_covariates) {
            out.warnings.push_back("covariate '" + d + "' is constant and was dropped");
        }
    }
    const int p = stdz.size();

    const bool nested = is_nested(v);
    const bool interaction = v == ClusterVariant::stratified_nested_interaction;
    const int n_alpha = nested ? n_admin1 : 1;
    const int n_gamma = !is_stratified(v) ? 0 : (interaction ? n_admin1 : 1);

    lgm::LatentModelSpec spec;
    spec.likelihood = lgm::Likelihood::beta_binomial;
    spec.fixed.push_back({"alpha", n_alpha, config.priors.intercept_precision});
    if (n_gamma > 0) {
        spec.fixed.push_back({"gamma", n_gamma, config.priors.strata_precision});
    }
    if (p > 0) {
        spec.fixed.push_back({"beta", p, config.priors.covariate_precision});
    }
    spec.bym2 = areas.icar;
    spec.iid_size = interaction ? n_admin1 : 0;
    const int g0 = n_alpha;
    const int be0 = n_alpha + n_gamma;
    const int u0 = spec.bym2_offset();
    const int d0 = spec.iid_offset();

    lgm::BinomialData data;
    std::vector<Eigen::Triplet<double>> trip;
    for (int c = 0; c < n; ++c) {
        const Cluster& cl = *used[c];
        const int i = area_of[c];
        const int a = areas.parent[static_cast<std::size_t>(i)];
        trip.emplace_back(c, nested ? a : 0, 1.0);
        if (n_gamma > 0 && cl.urbanicity == Urbanicity::rural) {
            trip.emplace_back(c, g0 + (interaction ? a : 0), 1.0);
        }
        if (p > 0) {
            const Eigen::VectorXd xs = stdz.apply(dataset.covariate_names, cl.covariates());
            for (int j = 0; j < p; ++j) {
                trip.emplace_back(c, be0 + j, xs[j]);
            }
        }
        trip.emplace_back(c, u0 + i, 1.0);
        if (interaction) {
            trip.emplace_back(c, d0 + a, 1.0);
        }
        data.successes.push_back(cl.positives());
        data.trials.push_back(cl.size());
        out.cluster_ids.push_back(cl.id);
    }
    spec.design.resize(n, spec.dim());
    spec.design.setFromTriplets(trip.begin(), trip.end());

    const lgm::GridSpec gs = make_grid(spec, config.priors, config.grid, true);
    out.fit = lgm::fit_laplace_lgm(std::move(spec), std::move(data), gs);
    for (const auto& w : out.fit.grid.warnings) {
        out.warnings.push_back(w);
    }
    out.samples = lgm::sample_posterior(out.fit, config.n_draws, config.seed);

    PredictorDraws& pd = out.predictors;
    pd.variant = v;
    pd.level = areas.level;
    pd.model_tag = out.config.model_tag;
    pd.area_ids = areas.area_ids();
    pd.parent = areas.parent;
    pd.admin1_ids = areas.admin1_ids;
    pd.area_clusters.assign(static_cast<std::size_t>(m), 0);
    for (int i : area_of) {
        pd.area_clusters[static_cast<std::size_t>(i)]++;
    }
    pd.standardization = stdz;
    const Eigen::MatrixXd& lat = out.samples.latent;
    pd.alpha = lat.middleRows(0, n_alpha);
    pd.gamma = lat.middleRows(g0, n_gamma);
    pd.beta = lat.middleRows(be0, p);
    pd.u = lat.middleRows(u0, m);
    pd.delta = lat.middleRows(d0, interaction ? n_admin1 : 0);
    return out;
}

}  // namespace prevmap
