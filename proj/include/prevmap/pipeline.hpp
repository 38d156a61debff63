#pragma once

#include "prevmap/aggregation.hpp"
#include "prevmap/diagnostics.hpp"
#include "prevmap/models.hpp"
#include "prevmap/simulate.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace prevmap {

enum class ModelType { fay_herriot, cluster };

struct ModelRequest {
    std::string tag;
    ModelType type = ModelType::fay_herriot;
    Level level = Level::admin2;
    ClusterVariant variant = ClusterVariant::stratified_nested;
    bool spatial = true;      // Fay-Herriot: BYM2 (true) or IID effect
    bool intercept = true;    // Fay-Herriot
    bool covariates = false;  // area-level (FH, from pixels) or cluster-level covariates
};

struct Thresholds {
    double cv = kDefaultCvThreshold;
    std::vector<double> exceedance{0.7};
    double variance_epsilon = 1e-10;
    double v_material_ratio = 0.9;
};

enum class AggregationMethod { stratified, pixel };

struct RunConfig {
    std::filesystem::path survey;
    std::filesystem::path geography;
    std::filesystem::path pixels;
    std::filesystem::path urban_fractions;
    SurveySchema schema;
    std::vector<ModelRequest> models;
    PriorSettings priors;
    GridSettings grid;
    std::uint64_t seed = 0;
    int n_draws = 1000;
    Thresholds thresholds;
    AggregationMethod aggregation = AggregationMethod::stratified;
    StrataConvention convention = StrataConvention::rural_share;
    std::filesystem::path output_dir;
    nlohmann::json source;  // the validated config document

    /// Parses and validates; relative paths resolve against `base_dir`. Throws ConfigError.
    static RunConfig parse(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);
};

PriorSettings parse_priors(const nlohmann::json& j);
GridSettings parse_grid(const nlohmann::json& j);
std::vector<ModelRequest> parse_models(const nlohmann::json& j);

/// Stage names in execution order.
const std::vector<std::string>& stage_names();

struct StageStatus {
    std::string name;
    std::string status = "skipped";  // ok, failed, skipped
    std::string message;
};

struct RunResult {
    int exit_code = 0;
    std::vector<StageStatus> stages;
};

/// Runs the named stages (all when empty) against `config.output_dir`. Each stage reads only
/// artifacts written by earlier stages. Writes manifest.json at the end.
RunResult run_pipeline(const RunConfig& config, const std::vector<std::string>& stages = {},
                       const std::vector<std::string>& model_filter = {},
                       std::optional<Level> level_filter = std::nullopt);

/// Maps an exception family onto the CLI exit code (2 config, 3 data, 4 numerical/internal).
int exit_code_for(const std::exception& e);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

// ---------------------------------------------------------------------------
// Model dispatch shared by the pipeline and the simulation harness.

struct ModelOutput {
    std::string tag;
    Level level = Level::admin2;
    ModelType type = ModelType::fay_herriot;
    std::optional<AreaPosterior> posterior;     // Fay-Herriot
    std::optional<PredictorDraws> predictors;   // cluster models
    csv::Table hypergrid;
    csv::Table hyper_summary;
    Eigen::MatrixXd loglik;                     // points x draws
    std::vector<std::string> warnings;
};

struct ModelInputs {
    const SurveyDataset* dataset = nullptr;       // assigned clusters (phantoms excluded)
    const TransformResult* fh_admin1 = nullptr;
    const TransformResult* fh_admin2 = nullptr;   // phantom-augmented
    std::vector<std::string> phantom_areas;
    const AreaStructure* admin1 = nullptr;
    const AreaStructure* admin2 = nullptr;
    /// Area-level covariates (raw) per level, rows in structure order.
    std::vector<std::string> area_covariate_names;
    Eigen::MatrixXd admin1_covariates;
    Eigen::MatrixXd admin2_covariates;
};

ModelOutput fit_model(const ModelRequest& request, const ModelInputs& inputs,
                      const PriorSettings& priors, const GridSettings& grid, int n_draws,
                      std::uint64_t seed);

/// Area posterior of a fitted model: FH draws directly, cluster models aggregated with q.
AreaPosterior area_posterior(const ModelOutput& output, const std::vector<UrbanFraction>& q,
                             StrataConvention convention);

// ---------------------------------------------------------------------------
// Simulation scenarios

struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 0;
    int replicates = 10;
    int n_admin1 = 8;
    int admin2_per_admin1 = 5;
    sim::PopulationParams population;
    sim::DesignSpec design;
    std::vector<ModelRequest> models;
    PriorSettings priors;
    GridSettings grid;
    int n_draws = 300;
    double variance_epsilon = 1e-10;

    static Scenario parse(const nlohmann::json& j);
};

struct ScenarioResult {
    /// model tag -> replicate -> admin2 estimates (mean and 95% interval).
    std::map<std::string, std::vector<std::vector<sim::IntervalEstimate>>> admin2;
    /// model tag -> replicate -> national estimate.
    std::map<std::string, std::vector<sim::IntervalEstimate>> national;
    sim::SyntheticPopulation population;
    std::vector<std::string> warnings;
};

/// Runs the scenario. Model "direct" is always included (Hajek at admin2 plus national).
ScenarioResult run_scenario(const Scenario& scenario);
/// metrics.csv (admin2 and national rows) and national_replicates.csv.
void write_scenario_outputs(const ScenarioResult& result, const std::filesystem::path& out_dir);

}  // namespace prevmap
