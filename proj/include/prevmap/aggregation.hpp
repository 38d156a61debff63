#pragma once

#include "prevmap/models.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace prevmap {

struct Pixel {
    std::string id;
    double lon = 0.0;
    double lat = 0.0;
    std::string admin1_id;
    std::string admin2_id;
    double total_pop = 0.0;
    double target_pop = 0.0;
    std::vector<double> covariates;  // aligned with PixelTable::covariate_names

    const std::string& area(Level level) const {
        return level == Level::admin1 ? admin1_id : admin2_id;
    }
};

/// Flat raster extract: pixel_id, lon, lat, admin1_id, admin2_id, total_pop, target_pop, cov_*.
struct PixelTable {
    std::vector<std::string> covariate_names;  // without the cov_ prefix
    std::vector<Pixel> pixels;

    static PixelTable parse(const csv::Table& table);
    static PixelTable load(const std::filesystem::path& path);
    csv::Table table() const;
    /// Sum of target_pop per area id at a level.
    std::map<std::string, double> target_population(Level level) const;
};

struct UrbanThreshold {
    std::string admin1_id;
    double target = kNaN;     // reported urban fraction of total_pop
    double threshold = kInf;  // pixels with total_pop >= threshold are urban
    double achieved = 0.0;    // realised urban fraction with whole-pixel labels
    int n_urban = 0;

    double gap() const { return achieved - target; }
};

struct UrbanPartition {
    std::vector<UrbanThreshold> thresholds;  // sorted by admin1 id
    std::vector<bool> urban;                 // per pixel, table order

    const UrbanThreshold* threshold_for(const std::string& admin1_id) const;
};

/// Per admin1: pixels ranked by total_pop (descending); the threshold is the value of the
/// pixel at which the cumulative share first reaches the reported fraction.
UrbanPartition urban_thresholds(const PixelTable& pixels,
                                const std::map<std::string, double>& reported_fractions);

struct UrbanFraction {
    std::string area_id;
    double q = kNaN;  // urban share of target_pop
    double achieved_fraction_gap = kNaN;  // threshold discreteness gap of the (parent) admin1
    std::string flag = "ok";              // "ok" or "undefined"
};

std::vector<UrbanFraction> urban_fractions(const UrbanPartition& partition,
                                           const PixelTable& pixels, Level level,
                                           const std::vector<std::string>& area_ids);
csv::Table urban_fraction_table(const std::vector<UrbanFraction>& q);
std::vector<UrbanFraction> parse_urban_fraction_table(const csv::Table& table);

/// Which share of the area carries the rural effect gamma.
enum class StrataConvention {
    rural_share,  // theta = q expit(eta_urban) + (1 - q) expit(eta_urban + gamma)
    urban_share   // theta = q expit(eta + gamma) + (1 - q) expit(eta)
};
std::string_view to_string(StrataConvention c);
StrataConvention parse_strata_convention(std::string_view s);

/// Area prevalence draws from stratum-specific predictors weighted by urban fractions.
/// Unstratified variants ignore q. Areas without a defined q are excluded and listed.
/// `area_covariates` holds standardized covariates per area (zero, the sample mean, when null).
AreaPosterior aggregate_stratified(const PredictorDraws& predictors,
                                   const std::vector<UrbanFraction>& q,
                                   StrataConvention convention = StrataConvention::rural_share,
                                   const std::vector<Eigen::VectorXd>* area_covariates = nullptr);

/// Target-population weighted mean of pixel prevalences within each area. Pixel covariates are
/// standardized with the fit's stored statistics; pixel strata come from the partition.
AreaPosterior aggregate_pixel(const PredictorDraws& predictors, const PixelTable& pixels,
                              const UrbanPartition& partition,
                              StrataConvention convention = StrataConvention::rural_share);

/// Population-weighted admin1 (or national, with a single parent) draws from admin2 draws.
/// `parent_of` maps each admin2 id to its coarse id; weights are per admin2 id.
AreaPosterior aggregate_up(const AreaPosterior& fine, const std::map<std::string, std::string>& parent_of,
                           const std::map<std::string, double>& weights, Level coarse_level);

}  // namespace prevmap
