#pragma once

#include "prevmap/direct.hpp"
#include "prevmap/models.hpp"

#include <map>
#include <string>
#include <vector>

namespace prevmap {

struct CvFlag {
    std::string area_id;
    double mean = kNaN;
    double sd = kNaN;
    double cv = kNaN;
    double interval_width = kNaN;
    bool usable = false;  // cv defined and below the threshold
};

inline constexpr double kDefaultCvThreshold = 0.167;

std::vector<CvFlag> cv_flags(const AreaPosterior& posterior, double threshold = kDefaultCvThreshold);
/// Same rule applied to precomputed summaries.
CvFlag cv_flag(const std::string& area_id, const SummaryStats& s, double threshold);
csv::Table cv_table(const std::vector<CvFlag>& flags, const std::string& model_tag);

/// Posterior of the between-area sample variance of prevalence (one value per draw).
struct VStatistic {
    std::string model_tag;
    Eigen::VectorXd draws;
    SummaryStats summary;
};

VStatistic oversmoothing_v(const AreaPosterior& posterior);

/// Copies each coarse area's draws onto its fine children, in `fine_ids` order.
AreaPosterior replicate_to_children(const AreaPosterior& coarse,
                                    const std::vector<std::string>& fine_ids,
                                    const std::map<std::string, std::string>& parent_of);

struct VComparison {
    VStatistic fine;
    VStatistic coarse;
    double ratio = kNaN;  // mean v_fine / mean v_coarse
    bool oversmoothing_likely = false;
};

/// Over-smoothing is flagged when mean v of the fine model falls below `material_ratio` times
/// that of the coarse replication.
VComparison compare_v(const AreaPosterior& fine, const AreaPosterior& coarse_replicated,
                      double material_ratio = 0.9);
csv::Table v_table(const std::vector<VStatistic>& stats);

/// Share of draws strictly above the threshold, per area.
std::vector<double> exceedance(const AreaPosterior& posterior, double threshold);
csv::Table exceedance_table(const AreaPosterior& posterior, const std::vector<double>& thresholds);

struct WaicResult {
    double waic = kNaN;
    double p_waic = kNaN;
    double lppd = kNaN;
    int n_points = 0;
};

/// `loglik` is points x draws. p_waic uses the sample variance (divisor n_draws - 1).
WaicResult waic(const Eigen::MatrixXd& loglik);
csv::Table waic_table(const std::vector<std::pair<std::string, WaicResult>>& rows);

struct ConsistencyRow {
    std::string area_id;
    double model_mean = kNaN;
    double model_sd = kNaN;
    double reference = kNaN;
    double reference_sd = kNaN;
    double z = kNaN;
    bool systematic = false;  // |z| > 2
};

/// Population-weighted aggregate of `model` to the coarse areas of `parent_of`, compared with
/// direct estimates there; z = (model - direct) / sqrt(model_sd^2 + direct_var).
std::vector<ConsistencyRow> consistency_check(const AreaPosterior& model,
                                              const std::vector<DirectEstimate>& reference,
                                              const std::map<std::string, std::string>& parent_of,
                                              const std::map<std::string, double>& weights);
/// Row builder used by consistency_check; exposed for swapped-role checks.
ConsistencyRow consistency_row(std::string area_id, double model_mean, double model_sd,
                               double reference, double reference_sd);
csv::Table consistency_table(const std::vector<ConsistencyRow>& rows, const std::string& model_tag,
                             const std::string& scope);

}  // namespace prevmap
