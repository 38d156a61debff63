#pragma once

#include "prevmap/common.hpp"
#include "prevmap/csv.hpp"
#include "prevmap/geometry.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace prevmap {

struct IndividualRecord {
    int outcome = 0;  // 0 or 1
    double weight = 1.0;
    std::string cluster_id;
    std::string stratum_id;
    Urbanicity urbanicity = Urbanicity::urban;
    std::vector<double> covariates;
};

struct Cluster {
    std::string id;
    std::optional<geometry::Point> location;
    std::string admin1_id;           // assigned (or recorded when no geography is used)
    std::string admin2_id;           // assigned; empty when unknown
    std::string recorded_admin1_id;  // label carried by the survey, may be empty
    std::string stratum_id;
    Urbanicity urbanicity = Urbanicity::urban;
    bool phantom = false;
    std::vector<IndividualRecord> records;

    int size() const { return static_cast<int>(records.size()); }
    int positives() const;
    double weight_sum() const;
    /// Mean of the member records' covariate vectors.
    std::vector<double> covariates() const;
};

struct StratumInfo {
    std::string id;
    int n_clusters = 0;
};

struct SurveyDataset {
    std::vector<Cluster> clusters;
    std::vector<StratumInfo> strata;
    std::vector<std::string> covariate_names;
    /// Records removed at load time because a covariate value was missing.
    std::size_t dropped_missing_covariates = 0;

    std::size_t n_records() const;
    std::size_t n_positive() const;
    const std::string& area_of(const Cluster& c, Level level) const {
        return level == Level::admin1 ? c.admin1_id : c.admin2_id;
    }
};

/// Column mapping for the survey CSV. Empty optional names mean "not present".
struct SurveySchema {
    std::string outcome = "outcome";
    std::string weight = "weight";
    std::string cluster = "cluster";
    std::string stratum = "stratum";
    std::string urban = "urban";
    std::string admin1;
    std::string admin2;
    std::string lon;
    std::string lat;
    std::vector<std::string> covariates;
};

/// Groups records into clusters (first-seen order) and strata. Cluster-level labels come from
/// `cluster_meta`; members must agree on stratum and urbanicity.
SurveyDataset build_dataset(std::vector<IndividualRecord> records,
                            const std::unordered_map<std::string, Cluster>& cluster_meta,
                            std::vector<std::string> covariate_names);

SurveyDataset load_survey(const std::filesystem::path& path, const SurveySchema& schema,
                          Warnings* warnings = nullptr);
SurveyDataset parse_survey(const csv::Table& table, const SurveySchema& schema,
                           Warnings* warnings = nullptr);

/// Canonical export of a (possibly assigned) dataset; reloadable with canonical_schema().
csv::Table survey_table(const SurveyDataset& dataset);
SurveySchema canonical_schema(const std::vector<std::string>& covariate_names);

struct Area {
    std::string id;
    Level level = Level::admin2;
    std::string parent_id;  // admin1 id for admin2 areas
    std::vector<geometry::Ring> rings;
};

/// Two-level area hierarchy with polygons. Areas are kept sorted by id.
class Geography {
public:
    Geography() = default;
    Geography(std::vector<Area> admin1, std::vector<Area> admin2);

    const std::vector<Area>& areas(Level level) const {
        return level == Level::admin1 ? admin1_ : admin2_;
    }
    std::size_t size(Level level) const { return areas(level).size(); }
    std::optional<std::size_t> index_of(Level level, const std::string& id) const;
    std::size_t require_index(Level level, const std::string& id) const;
    /// Admin1 index of each admin2 area.
    const std::vector<std::size_t>& parent_index() const { return parent_; }
    std::vector<std::string> ids(Level level) const;

private:
    std::vector<Area> admin1_;
    std::vector<Area> admin2_;
    std::map<std::string, std::size_t> admin1_index_;
    std::map<std::string, std::size_t> admin2_index_;
    std::vector<std::size_t> parent_;
};

/// GeoJSON FeatureCollection; features carry properties area_id, level, parent_id.
Geography parse_geography(std::string_view geojson);
Geography load_geography(const std::filesystem::path& path);
std::string geography_to_geojson(const Geography& geo);

enum class AssignmentStatus { assigned, reassigned, unassigned, no_location, recorded };
std::string_view to_string(AssignmentStatus s);

struct AssignmentEntry {
    std::string cluster_id;
    std::string admin1_id;
    std::string admin2_id;
    std::string recorded_admin1_id;
    AssignmentStatus status = AssignmentStatus::assigned;
    double boundary_distance = 0.0;  // for reassigned clusters
};

struct AssignmentResult {
    SurveyDataset dataset;  // clusters that received an admin2 area
    std::vector<AssignmentEntry> entries;
    Warnings warnings;
    std::size_t count(AssignmentStatus s) const;
};

/// Point-in-polygon assignment with recorded-admin1 correction.
AssignmentResult assign_clusters(const SurveyDataset& dataset, const Geography& geography);

struct AreaCount {
    std::string area_id;
    Level level = Level::admin2;
    int n_clusters = 0;
    int n_urban_clusters = 0;
    int n_individuals = 0;
};

struct UrbanSamplingRow {
    std::string admin1_id;
    int n_clusters = 0;
    double sampled_urban_fraction = kNaN;
    double population_urban_fraction = kNaN;
};

struct ValidationReport {
    std::vector<AreaCount> admin1_counts;
    std::vector<AreaCount> admin2_counts;
    std::vector<std::string> zero_cluster_areas;  // admin2
    std::vector<std::string> one_cluster_areas;   // admin2
    std::vector<UrbanSamplingRow> urban_sampling;
    double weighted_urban_prevalence = kNaN;
    double weighted_rural_prevalence = kNaN;
    double weighted_log_odds_ratio = kNaN;  // urban vs rural
    double median_clusters_admin1 = kNaN;
    double median_clusters_admin2 = kNaN;
    double median_individuals_admin1 = kNaN;
    double median_individuals_admin2 = kNaN;
    std::size_t total_clusters = 0;
    std::size_t total_individuals = 0;
};

ValidationReport validate(const SurveyDataset& dataset, const Geography& geography,
                          const std::map<std::string, double>& population_urban_fractions);

csv::Table validation_counts_table(const ValidationReport& report);
csv::Table validation_urban_table(const ValidationReport& report);
std::string validation_summary(const ValidationReport& report);
csv::Table assignment_table(const AssignmentResult& result);

/// Two-column CSV admin1_id,urban_fraction.
std::map<std::string, double> load_urban_fractions(const std::filesystem::path& path);

/// Median with linear interpolation between order statistics.
double median(std::vector<double> values);

}  // namespace prevmap
