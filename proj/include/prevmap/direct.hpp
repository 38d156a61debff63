#pragma once

#include "prevmap/data_model.hpp"

#include <string>
#include <vector>

namespace prevmap {

enum class DirectFlag { ok, no_data, boundary_estimate, zero_variance };
std::string_view to_string(DirectFlag f);
DirectFlag parse_direct_flag(std::string_view s);

struct DirectEstimate {
    std::string area_id;
    double p_hat = kNaN;
    double var_hat = kNaN;
    int n_clusters = 0;
    int n_individuals = 0;
    DirectFlag flag = DirectFlag::no_data;
    /// Strata with a single area cluster (they contribute nothing to var_hat).
    int lonely_strata = 0;

    /// 95% interval, normal on the logit scale; NaN unless flag == ok.
    double ci_lower(double z = 1.959963984540054) const;
    double ci_upper(double z = 1.959963984540054) const;
    double cv() const;
};

struct TransformedEstimate {
    std::string area_id;
    double theta_hat = kNaN;  // logit(p_hat)
    double v_hat = kNaN;      // delta-method variance on the logit scale
};

struct OmittedEstimate {
    std::string area_id;
    std::string reason;
};

struct TransformResult {
    std::vector<TransformedEstimate> estimates;
    std::vector<OmittedEstimate> omitted;
};

/// Weighted (Hajek) prevalence per area with stratified with-replacement linearized variance.
/// One entry per id in `area_ids`, in that order.
std::vector<DirectEstimate> hajek(const SurveyDataset& dataset, Level level,
                                  const std::vector<std::string>& area_ids,
                                  Warnings* warnings = nullptr);

/// Logit transform; entries degenerate or with logit-scale variance <= epsilon are omitted.
TransformResult logit_transform(const std::vector<DirectEstimate>& estimates,
                                double variance_epsilon = 1e-10);

struct PhantomResult {
    SurveyDataset dataset;
    std::vector<std::string> augmented_areas;
};

/// Adds one phantom cluster to every sampled admin2 area whose logit-scale variance is
/// undefined or <= epsilon. Phantom prevalence is the parent admin1 estimate; its weight sum
/// is the mean cluster weight sum over observed clusters in that admin1.
PhantomResult phantom_augment(const SurveyDataset& dataset, const Geography& geography,
                              const std::vector<DirectEstimate>& admin1_direct,
                              double variance_epsilon = 1e-10);

csv::Table direct_table(const std::vector<DirectEstimate>& estimates);
std::vector<DirectEstimate> parse_direct_table(const csv::Table& table);

}  // namespace prevmap
