#pragma once

#include "prevmap/aggregation.hpp"
#include "prevmap/data_model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace prevmap::sim {

/// Unit-square grid: admin1 area a is column a, split into `rows` admin2 cells.
Geography grid_geography(int n_admin1 = 8, int admin2_per_admin1 = 5);

struct PopulationParams {
    int eas_per_admin2 = 80;
    double alpha = 0.0;          // urban log-odds baseline
    double admin1_sd = 0.0;      // sd of admin1 intercept deviations
    double gamma = -0.453;       // rural minus urban log-odds
    double sigma = 0.5;          // BYM2 total sd over admin2 areas
    double phi = 0.5;
    double overdispersion = 0.0; // d of the beta layer (0: p_c = expit(eta) exactly)
    double beta = 0.0;           // effect of one standard-normal EA covariate
    bool covariate = false;
    double urban_share_min = 0.15;  // range of the per-admin2 urban EA share
    double urban_share_max = 0.6;
    int urban_households_min = 150;
    int urban_households_max = 250;
    int rural_households_min = 50;
    int rural_households_max = 120;
    double people_per_household = 5.0;  // total_pop multiplier for the pixel table

    void check() const;
};

struct EnumerationArea {
    std::string id;
    std::string admin1_id;
    std::string admin2_id;
    Urbanicity urbanicity = Urbanicity::urban;
    int households = 0;
    double prevalence = kNaN;  // p_c
    double covariate = 0.0;
    geometry::Point location;
};

struct SyntheticPopulation {
    PopulationParams params;
    Geography geography;
    std::vector<EnumerationArea> eas;
    std::vector<double> admin1_effect;  // per admin1 (geography order)
    std::vector<double> u;              // per admin2 (geography order)
    std::map<std::string, double> admin2_truth;  // household-weighted p_i
    std::map<std::string, double> admin1_truth;
    double national_truth = kNaN;
    std::map<std::string, double> admin2_urban_share;  // urban household share q_i
    std::map<std::string, double> admin1_urban_share;
    std::map<std::string, double> admin2_households;

    std::vector<std::string> covariate_names() const;
    /// One pixel per EA: total_pop = households x people_per_household, target_pop = households.
    PixelTable pixels() const;
    /// Urban total-population share per admin1 (the reported-fraction input).
    std::map<std::string, double> reported_urban_fractions() const;
    std::vector<UrbanFraction> true_urban_fractions(Level level) const;
};

SyntheticPopulation gen_population(const PopulationParams& params, const Geography& geography,
                                   std::uint64_t seed);

struct DesignSpec {
    int clusters_per_admin1 = 50;
    /// Sampled urban cluster share = min(max_urban_share, oversampling x population urban EA
    /// share), at least one cluster per stratum.
    double urban_oversampling = 1.0;
    double max_urban_share = 0.9;
    int households_per_cluster = 25;
    /// Explicit per-stratum counts ("<admin1>_urban", "<admin1>_rural") override the rule.
    std::map<std::string, int> clusters_per_stratum;

    void check() const;
};

/// Cluster allocation per stratum id under the design.
std::map<std::string, int> allocate(const SyntheticPopulation& population, const DesignSpec& design);

/// Inclusion probabilities of systematic PPS with certainty selections, for n draws.
std::vector<double> pps_inclusion(const std::vector<double>& sizes, int n);

/// Systematic PPS: certainty units first, then a random start on the randomly ordered list.
/// Returns indices into `sizes` and fills their inclusion probabilities.
std::vector<std::size_t> systematic_pps(const std::vector<double>& sizes, int n, Rng& rng,
                                        std::vector<double>* inclusion = nullptr);

SurveyDataset draw_sample(const SyntheticPopulation& population, const DesignSpec& design,
                          std::uint64_t seed);

struct IntervalEstimate {
    std::string area_id;
    double estimate = kNaN;
    double lower = kNaN;
    double upper = kNaN;
};

struct AreaMetrics {
    std::string area_id;
    double truth = kNaN;
    double bias = kNaN;
    double mse = kNaN;
    double coverage = kNaN;
    double mean_width = kNaN;
    int n_replicates = 0;
};

/// Per-area bias, MSE, interval coverage and width over replicates. Every replicate must
/// cover the same area set. NaN estimates (areas without an estimate) are skipped.
std::vector<AreaMetrics> evaluate(const std::vector<std::vector<IntervalEstimate>>& replicates,
                                  const std::map<std::string, double>& truth);
csv::Table metrics_table(const std::vector<AreaMetrics>& metrics, const std::string& model_tag);

/// Mean over areas of the squared error of one replicate.
double mean_squared_error(const std::vector<IntervalEstimate>& estimates,
                          const std::map<std::string, double>& truth);

}  // namespace prevmap::sim
