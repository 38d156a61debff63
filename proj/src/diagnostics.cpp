#include "prevmap/diagnostics.hpp"

#include "prevmap/aggregation.hpp"

#include <algorithm>

namespace prevmap {

CvFlag cv_flag(const std::string& area_id, const SummaryStats& s, double threshold) {
    CvFlag f;
    f.area_id = area_id;
    f.mean = s.mean;
    f.sd = s.sd;
    f.interval_width = s.upper95 - s.lower95;
    if (s.mean > 0.0) {
        f.cv = s.sd / s.mean;
        f.usable = f.cv < threshold;
    }
    return f;
}

std::vector<CvFlag> cv_flags(const AreaPosterior& posterior, double threshold) {
    const auto sums = posterior.summaries();
    std::vector<CvFlag> out;
    out.reserve(sums.size());
    for (std::size_t i = 0; i < sums.size(); ++i) {
        out.push_back(cv_flag(posterior.area_ids[i], sums[i], threshold));
    }
    return out;
}

csv::Table cv_table(const std::vector<CvFlag>& flags, const std::string& model_tag) {
    csv::Table t({"area_id", "model_tag", "mean", "sd", "cv", "interval_width", "flag"});
    for (const auto& f : flags) {
        t.add_row({f.area_id, model_tag, csv::format_number(f.mean), csv::format_number(f.sd),
                   csv::format_number(f.cv), csv::format_number(f.interval_width),
                   std::isnan(f.cv) ? "cv_undefined" : (f.usable ? "usable" : "not_usable")});
    }
    return t;
}

VStatistic oversmoothing_v(const AreaPosterior& posterior) {
    const Eigen::Index m = posterior.draws.rows();
    if (m < 2) {
        throw DataError("over-smoothing statistic needs at least 2 areas");
    }
    VStatistic v;
    v.model_tag = posterior.model_tag;
    const Eigen::RowVectorXd mean = posterior.draws.colwise().mean();
    v.draws = ((posterior.draws.rowwise() - mean).array().square().colwise().sum() /
               static_cast<double>(m - 1))
                  .transpose();
    v.summary = summarize(v.draws);
    return v;
}

AreaPosterior replicate_to_children(const AreaPosterior& coarse,
                                    const std::vector<std::string>& fine_ids,
                                    const std::map<std::string, std::string>& parent_of) {
    AreaPosterior out;
    out.level = Level::admin2;
    out.model_tag = coarse.model_tag + "_replicated";
    out.draws.resize(static_cast<Eigen::Index>(fine_ids.size()), coarse.draws.cols());
    Eigen::Index r = 0;
    for (const auto& id : fine_ids) {
        auto p = parent_of.find(id);
        const auto idx = p == parent_of.end() ? std::nullopt : coarse.index_of(p->second);
        if (!idx) {
            throw DataError("no coarse estimate to replicate onto area " + id);
        }
        out.draws.row(r++) = coarse.draws.row(*idx);
        out.area_ids.push_back(id);
        out.flags.push_back("replicated");
    }
    return out;
}

VComparison compare_v(const AreaPosterior& fine, const AreaPosterior& coarse_replicated,
                      double material_ratio) {
    VComparison c;
    c.fine = oversmoothing_v(fine);
    c.coarse = oversmoothing_v(coarse_replicated);
    c.ratio = c.fine.summary.mean / c.coarse.summary.mean;
    c.oversmoothing_likely = c.ratio < material_ratio;
    return c;
}

csv::Table v_table(const std::vector<VStatistic>& stats) {
    csv::Table t({"model_tag", "mean", "median", "sd", "lower95", "upper95"});
    for (const auto& v : stats) {
        t.add_row({v.model_tag, csv::format_number(v.summary.mean),
                   csv::format_number(v.summary.median), csv::format_number(v.summary.sd),
                   csv::format_number(v.summary.lower95), csv::format_number(v.summary.upper95)});
    }
    return t;
}

std::vector<double> exceedance(const AreaPosterior& posterior, double threshold) {
    std::vector<double> out;
    const auto n = static_cast<double>(posterior.draws.cols());
    for (Eigen::Index i = 0; i < posterior.draws.rows(); ++i) {
        out.push_back(n > 0 ? (posterior.draws.row(i).array() > threshold).count() / n : kNaN);
    }
    return out;
}

csv::Table exceedance_table(const AreaPosterior& posterior, const std::vector<double>& thresholds) {
    csv::Table t({"area_id", "model_tag", "threshold", "probability"});
    for (double th : thresholds) {
        const auto p = exceedance(posterior, th);
        for (std::size_t i = 0; i < p.size(); ++i) {
            t.add_row({posterior.area_ids[i], posterior.model_tag, csv::format_number(th),
                       csv::format_number(p[i])});
        }
    }
    return t;
}

WaicResult waic(const Eigen::MatrixXd& loglik) {
    const Eigen::Index s = loglik.cols();
    if (s < 2) {
        throw DataError("WAIC needs at least 2 posterior draws");
    }
    WaicResult r;
    r.n_points = static_cast<int>(loglik.rows());
    double lppd = 0.0, p = 0.0;
    for (Eigen::Index i = 0; i < loglik.rows(); ++i) {
        const auto row = loglik.row(i).array();
        const double mx = row.maxCoeff();
        lppd += mx + std::log((row - mx).exp().sum() / static_cast<double>(s));
        const double mean = row.mean();
        p += (row - mean).square().sum() / static_cast<double>(s - 1);
    }
    r.lppd = lppd;
    r.p_waic = p;
    r.waic = -2.0 * (lppd - p);
    return r;
}

csv::Table waic_table(const std::vector<std::pair<std::string, WaicResult>>& rows) {
    csv::Table t({"model_tag", "waic", "p_waic", "lppd", "n_points"});
    for (const auto& [tag, w] : rows) {
        t.add_row({tag, csv::format_number(w.waic), csv::format_number(w.p_waic),
                   csv::format_number(w.lppd), std::to_string(w.n_points)});
    }
    return t;
}

ConsistencyRow consistency_row(std::string area_id, double model_mean, double model_sd,
                               double reference, double reference_sd) {
    ConsistencyRow r;
    r.area_id = std::move(area_id);
    r.model_mean = model_mean;
    r.model_sd = model_sd;
    r.reference = reference;
    r.reference_sd = reference_sd;
    const double diff = model_mean - reference;
    const double se = std::sqrt(model_sd * model_sd + reference_sd * reference_sd);
    if (diff == 0.0) {
        r.z = 0.0;
    } else if (se > 0.0) {
        r.z = diff / se;
    } else {
        r.z = diff > 0.0 ? kInf : -kInf;
    }
    r.systematic = std::abs(r.z) > 2.0;
    return r;
}

std::vector<ConsistencyRow> consistency_check(const AreaPosterior& model,
                                              const std::vector<DirectEstimate>& reference,
                                              const std::map<std::string, std::string>& parent_of,
                                              const std::map<std::string, double>& weights) {
    const AreaPosterior agg = aggregate_up(model, parent_of, weights, Level::admin1);
    std::map<std::string, const DirectEstimate*> ref;
    for (const auto& e : reference) {
        ref[e.area_id] = &e;
    }
    std::vector<ConsistencyRow> out;
    const auto sums = agg.summaries();
    for (std::size_t i = 0; i < agg.area_ids.size(); ++i) {
        auto it = ref.find(agg.area_ids[i]);
        if (it == ref.end() || std::isnan(it->second->p_hat)) {
            ConsistencyRow r;
            r.area_id = agg.area_ids[i];
            r.model_mean = sums[i].mean;
            r.model_sd = sums[i].sd;
            out.push_back(r);
            continue;
        }
        const double var = std::isnan(it->second->var_hat) ? 0.0 : it->second->var_hat;
        out.push_back(consistency_row(agg.area_ids[i], sums[i].mean, sums[i].sd,
                                      it->second->p_hat, std::sqrt(var)));
    }
    return out;
}

csv::Table consistency_table(const std::vector<ConsistencyRow>& rows, const std::string& model_tag,
                             const std::string& scope) {
    csv::Table t({"area_id", "scope", "model_tag", "model_mean", "model_sd", "direct",
                  "direct_sd", "z", "flag"});
    for (const auto& r : rows) {
        t.add_row({r.area_id, scope, model_tag, csv::format_number(r.model_mean),
                   csv::format_number(r.model_sd), csv::format_number(r.reference),
                   csv::format_number(r.reference_sd), csv::format_number(r.z),
                   std::isnan(r.z) ? "no_reference" : (r.systematic ? "systematic" : "ok")});
    }
    return t;
}

}  // namespace prevmap
