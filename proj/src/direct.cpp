#include "prevmap/direct.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace prevmap {

std::string_view to_string(DirectFlag f) {
    switch (f) {
    case DirectFlag::ok: return "ok";
    case DirectFlag::no_data: return "no_data";
    case DirectFlag::boundary_estimate: return "boundary_estimate";
    case DirectFlag::zero_variance: return "zero_variance";
    }
    return "unknown";
}

DirectFlag parse_direct_flag(std::string_view s) {
    for (DirectFlag f : {DirectFlag::ok, DirectFlag::no_data, DirectFlag::boundary_estimate,
                         DirectFlag::zero_variance}) {
        if (s == to_string(f)) {
            return f;
        }
    }
    throw DataError("unknown direct-estimate flag '" + std::string(s) + "'");
}

double DirectEstimate::ci_lower(double z) const {
    if (flag != DirectFlag::ok) {
        return kNaN;
    }
    const double v = var_hat / std::pow(p_hat * (1 - p_hat), 2);
    return expit(logit(p_hat) - z * std::sqrt(v));
}

double DirectEstimate::ci_upper(double z) const {
    if (flag != DirectFlag::ok) {
        return kNaN;
    }
    const double v = var_hat / std::pow(p_hat * (1 - p_hat), 2);
    return expit(logit(p_hat) + z * std::sqrt(v));
}

double DirectEstimate::cv() const {
    if (std::isnan(var_hat) || !(p_hat > 0)) {
        return kNaN;
    }
    return std::sqrt(var_hat) / p_hat;
}

std::vector<DirectEstimate> hajek(const SurveyDataset& dataset, Level level,
                                  const std::vector<std::string>& area_ids, Warnings* warnings) {
    std::map<std::string, std::vector<const Cluster*>> by_area;
    for (const auto& c : dataset.clusters) {
        const std::string& id = dataset.area_of(c, level);
        if (!id.empty()) {
            by_area[id].push_back(&c);
        }
    }
    std::vector<DirectEstimate> out;
    out.reserve(area_ids.size());
    for (const auto& id : area_ids) {
        DirectEstimate est;
        est.area_id = id;
        auto it = by_area.find(id);
        if (it == by_area.end() || it->second.empty()) {
            out.push_back(est);
            continue;
        }
        const auto& clusters = it->second;
        double wy = 0.0, w = 0.0;
        for (const Cluster* c : clusters) {
            est.n_clusters += 1;
            est.n_individuals += c->size();
            for (const auto& r : c->records) {
                wy += r.weight * r.outcome;
                w += r.weight;
            }
        }
        est.p_hat = wy / w;
        if (est.p_hat <= 0.0 || est.p_hat >= 1.0) {
            est.flag = DirectFlag::boundary_estimate;
            out.push_back(est);
            continue;
        }
        // Residual totals per cluster, grouped by stratum.
        std::map<std::string, std::vector<double>> z_by_stratum;
        for (const Cluster* c : clusters) {
            double z = 0.0;
            for (const auto& r : c->records) {
                z += r.weight * (r.outcome - est.p_hat);
            }
            z_by_stratum[c->stratum_id].push_back(z);
        }
        double acc = 0.0;
        for (const auto& [stratum, z] : z_by_stratum) {
            const std::size_t nh = z.size();
            if (nh < 2) {
                ++est.lonely_strata;
                continue;
            }
            double zbar = 0.0;
            for (double v : z) {
                zbar += v;
            }
            zbar /= static_cast<double>(nh);
            double ss = 0.0;
            for (double v : z) {
                ss += (v - zbar) * (v - zbar);
            }
            acc += static_cast<double>(nh) / static_cast<double>(nh - 1) * ss;
        }
        if (est.lonely_strata > 0 && warnings) {
            warnings->add("area " + id + ": " + std::to_string(est.lonely_strata) +
                          " single-cluster stratum/strata contribute no variance");
        }
        est.var_hat = acc / (w * w);
        est.flag = est.var_hat > 0.0 ? DirectFlag::ok : DirectFlag::zero_variance;
        out.push_back(est);
    }
    return out;
}

TransformResult logit_transform(const std::vector<DirectEstimate>& estimates,
                                double variance_epsilon) {
    TransformResult res;
    for (const auto& e : estimates) {
        if (e.flag != DirectFlag::ok) {
            res.omitted.push_back({e.area_id, std::string(to_string(e.flag))});
            continue;
        }
        TransformedEstimate t;
        t.area_id = e.area_id;
        t.theta_hat = logit(e.p_hat);
        t.v_hat = e.var_hat / std::pow(e.p_hat * (1.0 - e.p_hat), 2);
        if (!(t.v_hat > variance_epsilon)) {
            res.omitted.push_back({e.area_id, "variance_below_epsilon"});
            continue;
        }
        res.estimates.push_back(t);
    }
    return res;
}

PhantomResult phantom_augment(const SurveyDataset& dataset, const Geography& geography,
                              const std::vector<DirectEstimate>& admin1_direct,
                              double variance_epsilon) {
    const auto admin2_ids = geography.ids(Level::admin2);
    const auto admin2_direct = hajek(dataset, Level::admin2, admin2_ids);
    std::map<std::string, const DirectEstimate*> parent_est;
    for (const auto& e : admin1_direct) {
        parent_est[e.area_id] = &e;
    }
    // Mean observed cluster weight sum per admin1.
    std::map<std::string, std::pair<double, int>> weight_sums;
    for (const auto& c : dataset.clusters) {
        if (!c.phantom) {
            auto& ws = weight_sums[c.admin1_id];
            ws.first += c.weight_sum();
            ws.second += 1;
        }
    }

    PhantomResult res;
    res.dataset = dataset;
    const auto& admin2 = geography.areas(Level::admin2);
    const auto& admin1 = geography.areas(Level::admin1);
    for (std::size_t i = 0; i < admin2_direct.size(); ++i) {
        const auto& est = admin2_direct[i];
        if (est.n_clusters == 0) {
            continue;  // nothing to stabilise; predicted from the linking model
        }
        bool needs = est.flag != DirectFlag::ok;
        if (!needs) {
            const double v = est.var_hat / std::pow(est.p_hat * (1.0 - est.p_hat), 2);
            needs = !(v > variance_epsilon);
        }
        if (!needs) {
            continue;
        }
        const std::string& parent_id = admin1[geography.parent_index()[i]].id;
        auto pe = parent_est.find(parent_id);
        if (pe == parent_est.end() || pe->second->flag != DirectFlag::ok) {
            throw DataError("cannot phantom-augment admin2 area " + admin2[i].id +
                            ": admin1 estimate for " + parent_id + " is degenerate");
        }
        const auto ws = weight_sums[parent_id];
        const double mean_w = ws.first / ws.second;
        const double p1 = pe->second->p_hat;

        // Phantom goes into the area's most populated stratum.
        std::map<std::string, int> strata;
        Urbanicity urb = Urbanicity::urban;
        for (const auto& c : dataset.clusters) {
            if (c.admin2_id == admin2[i].id) {
                ++strata[c.stratum_id];
            }
        }
        std::string stratum;
        int best = -1;
        for (const auto& [s, n] : strata) {
            if (n > best) {
                best = n;
                stratum = s;
            }
        }
        for (const auto& c : dataset.clusters) {
            if (c.admin2_id == admin2[i].id && c.stratum_id == stratum) {
                urb = c.urbanicity;
                break;
            }
        }
        Cluster ph;
        ph.id = "phantom_" + admin2[i].id;
        ph.admin1_id = parent_id;
        ph.admin2_id = admin2[i].id;
        ph.stratum_id = stratum;
        ph.urbanicity = urb;
        ph.phantom = true;
        const std::size_t ncov = dataset.covariate_names.size();
        ph.records.push_back({1, mean_w * p1, ph.id, stratum, urb, std::vector<double>(ncov, 0.0)});
        ph.records.push_back(
            {0, mean_w * (1.0 - p1), ph.id, stratum, urb, std::vector<double>(ncov, 0.0)});
        res.dataset.clusters.push_back(std::move(ph));
        res.augmented_areas.push_back(admin2[i].id);
    }
    std::map<std::string, int> counts;
    for (const auto& c : res.dataset.clusters) {
        ++counts[c.stratum_id];
    }
    res.dataset.strata.clear();
    for (const auto& [id, n] : counts) {
        res.dataset.strata.push_back({id, n});
    }
    return res;
}

csv::Table direct_table(const std::vector<DirectEstimate>& estimates) {
    csv::Table t({"area_id", "p_hat", "var_hat", "ci_lower", "ci_upper", "cv", "n_clusters",
                  "n_individuals", "flag"});
    for (const auto& e : estimates) {
        t.add_row({e.area_id, csv::format_number(e.p_hat), csv::format_number(e.var_hat),
                   csv::format_number(e.ci_lower()), csv::format_number(e.ci_upper()),
                   csv::format_number(e.cv()), std::to_string(e.n_clusters),
                   std::to_string(e.n_individuals), std::string(to_string(e.flag))});
    }
    return t;
}

std::vector<DirectEstimate> parse_direct_table(const csv::Table& table) {
    const auto c_id = table.require("area_id");
    const auto c_p = table.require("p_hat");
    const auto c_v = table.require("var_hat");
    const auto c_nc = table.require("n_clusters");
    const auto c_ni = table.require("n_individuals");
    const auto c_f = table.require("flag");
    std::vector<DirectEstimate> out;
    for (std::size_t r = 0; r < table.size(); ++r) {
        DirectEstimate e;
        e.area_id = table.at(r, c_id);
        e.p_hat = csv::parse_number(table.at(r, c_p));
        e.var_hat = csv::parse_number(table.at(r, c_v));
        e.n_clusters = static_cast<int>(csv::parse_integer(table.at(r, c_nc)));
        e.n_individuals = static_cast<int>(csv::parse_integer(table.at(r, c_ni)));
        e.flag = parse_direct_flag(table.at(r, c_f));
        out.push_back(e);
    }
    return out;
}

}  // namespace prevmap
