#pragma once

#include "prevmap/direct.hpp"
#include "prevmap/lgm.hpp"
#include "prevmap/spatial.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace prevmap {

// ---------------------------------------------------------------------------
// Shared settings

struct PriorSettings {
    double sigma_u = 1.0;  // P(sigma > sigma_u) = sigma_alpha
    double sigma_alpha = 0.01;
    double phi_u = 0.5;  // P(phi > phi_u) = phi_alpha
    double phi_alpha = 2.0 / 3.0;
    double iid_sigma_u = 1.0;
    double iid_sigma_alpha = 0.01;
    double intercept_precision = 1e-3;  // alpha and admin1 effects
    double covariate_precision = 1e-2;  // beta
    double strata_precision = 1e-2;     // gamma
};

struct GridSettings {
    int sigma_points = 25;
    int phi_points = 21;
    int d_points = 15;
    int iid_points = 7;
    double d_min = 1e-4;
    double d_max = 0.5;
    /// Log-posterior drop that ends the neighbourhood search (Laplace fits only).
    double prune_log_drop = 12.0;
    std::optional<double> fixed_sigma;
    std::optional<double> fixed_phi;
    std::optional<double> fixed_d;
    std::optional<double> fixed_iid_sigma;
};

/// Area set of a model level with its adjacency structure and admin1 parents.
struct AreaStructure {
    Level level = Level::admin2;
    std::shared_ptr<const ScaledIcar> icar;  // graph ids are the area ids
    std::vector<std::string> admin1_ids;
    std::vector<int> parent;  // admin1 index per area (identity at admin1)

    int size() const { return icar ? icar->graph.size() : 0; }
    const std::vector<std::string>& area_ids() const { return icar->graph.ids; }
    std::optional<int> index_of(const std::string& id) const;

    static AreaStructure from_geography(const Geography& geography, Level level,
                                        Warnings* warnings = nullptr);
};

/// Column centring and scaling computed on the estimation sample.
struct Standardization {
    std::vector<std::string> names;
    std::vector<double> means;
    std::vector<double> sds;

    /// Drops constant columns; reports their names through `dropped`.
    static Standardization fit(const std::vector<std::string>& names, const Eigen::MatrixXd& x,
                               std::vector<std::string>* dropped = nullptr);
    /// Standardized row for raw values named `raw_names`.
    Eigen::VectorXd apply(const std::vector<std::string>& raw_names,
                          const std::vector<double>& raw) const;
    int size() const { return static_cast<int>(names.size()); }
};

// ---------------------------------------------------------------------------
// Summaries

struct SummaryStats {
    double mean = kNaN;
    double median = kNaN;
    double sd = kNaN;
    double lower95 = kNaN;
    double upper95 = kNaN;
    double cv = kNaN;
};

/// Type-7 sample quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double prob);
/// Mean, median, sample sd, equal-tailed 95% interval and CV = sd/mean.
SummaryStats summarize(const Eigen::Ref<const Eigen::VectorXd>& draws);

/// Per-area prevalence draws of one model.
struct AreaPosterior {
    Level level = Level::admin2;
    std::string model_tag;
    std::vector<std::string> area_ids;
    Eigen::MatrixXd draws;            // areas x n_draws
    std::vector<std::string> flags;   // per area
    std::vector<OmittedEstimate> excluded;

    std::vector<SummaryStats> summaries() const;
    std::optional<int> index_of(const std::string& id) const;
};

/// area_id, level, model_tag, mean, median, lower95, upper95, sd, cv, flag.
csv::Table estimates_table(const AreaPosterior& posterior);
/// Wide draw table: area_id, flag, then one column per draw.
csv::Table draws_table(const AreaPosterior& posterior);
AreaPosterior parse_draws_table(const csv::Table& table, Level level, std::string model_tag);

/// name, mean, median, sd, lower95, upper95 for each named draw vector.
csv::Table hyper_summary_table(const lgm::PosteriorSamples& samples,
                               const std::vector<std::string>& present);

// ---------------------------------------------------------------------------
// Fay-Herriot

struct FHModelConfig {
    Level level = Level::admin2;
    bool intercept = true;
    /// BYM2 random effect; false gives an IID effect (phi fixed at 0).
    bool spatial = true;
    std::vector<std::string> covariate_names;
    Eigen::MatrixXd covariates;  // raw, one row per area in structure order
    PriorSettings priors;
    GridSettings grid;
    int n_draws = 1000;
    std::uint64_t seed = 1;
    std::string model_tag = "fh";
    /// Areas whose inputs were phantom-augmented upstream (flag only).
    std::vector<std::string> phantom_areas;
};

struct FHFit {
    AreaPosterior posterior;
    Eigen::MatrixXd theta;            // logit-scale draws, areas x n_draws
    lgm::LgmFit fit;
    lgm::PosteriorSamples samples;
    Standardization standardization;
    std::vector<std::string> dropped_covariates;
    std::vector<int> observed_area;   // area index of each observation
    std::vector<std::string> warnings;

    /// Gaussian sampling-model log-likelihood, observations x draws.
    Eigen::MatrixXd pointwise_loglik() const;
    std::vector<std::string> hyper_names() const;
};

FHFit fit_fay_herriot(const TransformResult& transformed, const AreaStructure& areas,
                      const FHModelConfig& config);

// ---------------------------------------------------------------------------
// Cluster-level beta-binomial models

enum class ClusterVariant {
    unstratified,
    nested_unstratified,
    stratified_nonnested,
    stratified_nested,
    stratified_nested_interaction
};
std::string_view to_string(ClusterVariant v);
ClusterVariant parse_cluster_variant(std::string_view s);
bool is_nested(ClusterVariant v);
bool is_stratified(ClusterVariant v);

struct ClusterModelConfig {
    ClusterVariant variant = ClusterVariant::stratified_nested;
    Level level = Level::admin2;
    bool use_covariates = true;
    PriorSettings priors;
    GridSettings grid;
    int n_draws = 1000;
    std::uint64_t seed = 1;
    std::string model_tag;  // defaults to the variant name
};

/// Posterior draws of every linear-predictor component, enough to rebuild eta anywhere.
struct PredictorDraws {
    ClusterVariant variant = ClusterVariant::unstratified;
    Level level = Level::admin2;
    std::string model_tag;
    std::vector<std::string> area_ids;
    std::vector<int> parent;  // admin1 index per area
    std::vector<std::string> admin1_ids;
    std::vector<int> area_clusters;  // sampled clusters per area
    Standardization standardization;
    Eigen::MatrixXd alpha;  // 1 or n_admin1 rows
    Eigen::MatrixXd gamma;  // 0, 1 or n_admin1 rows
    Eigen::MatrixXd beta;   // one row per covariate
    Eigen::MatrixXd u;      // one row per area
    Eigen::MatrixXd delta;  // n_admin1 rows for the interaction variant

    int n_draws() const { return static_cast<int>(u.cols()); }
    /// eta draws for an area and stratum at standardized covariates `x` (zero when null).
    Eigen::VectorXd eta(int area, Urbanicity stratum, const Eigen::VectorXd* x = nullptr) const;
    /// Prevalence draws expit(eta) per area at zero standardized covariates (unstratified
    /// variants) or for a single stratum.
    AreaPosterior area_prevalence(std::optional<Urbanicity> stratum = std::nullopt) const;

    csv::Table table() const;
    std::string metadata_json() const;
    static PredictorDraws parse(const csv::Table& table, const std::string& metadata_json);
};

struct ClusterFit {
    ClusterModelConfig config;
    PredictorDraws predictors;
    lgm::LgmFit fit;
    lgm::PosteriorSamples samples;
    std::vector<std::string> dropped_covariates;
    std::vector<std::string> warnings;
    std::vector<std::string> cluster_ids;  // observation order

    /// Beta-binomial log-likelihood per cluster, clusters x draws.
    Eigen::MatrixXd pointwise_loglik() const;
    std::vector<std::string> hyper_names() const;
};

ClusterFit fit_cluster_model(const SurveyDataset& dataset, const AreaStructure& areas,
                             const ClusterModelConfig& config);

/// Hyperparameter grid for a latent model built from the settings.
lgm::GridSpec make_grid(const lgm::LatentModelSpec& spec, const PriorSettings& priors,
                        const GridSettings& grid, bool laplace);

}  // namespace prevmap
