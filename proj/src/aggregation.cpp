#include "prevmap/aggregation.hpp"

#include <algorithm>

namespace prevmap {

namespace {

constexpr std::string_view kCovPrefix = "cov_";

}  // namespace

PixelTable PixelTable::parse(const csv::Table& table) {
    PixelTable out;
    const auto c_id = table.require("pixel_id");
    const auto c_lon = table.require("lon");
    const auto c_lat = table.require("lat");
    const auto c_a1 = table.require("admin1_id");
    const auto c_a2 = table.require("admin2_id");
    const auto c_tot = table.require("total_pop");
    const auto c_tgt = table.require("target_pop");
    std::vector<std::size_t> cov_cols;
    for (std::size_t j = 0; j < table.header().size(); ++j) {
        const auto& h = table.header()[j];
        if (h.size() > kCovPrefix.size() && h.compare(0, kCovPrefix.size(), kCovPrefix) == 0) {
            out.covariate_names.push_back(h.substr(kCovPrefix.size()));
            cov_cols.push_back(j);
        }
    }
    out.pixels.reserve(table.size());
    for (std::size_t r = 0; r < table.size(); ++r) {
        Pixel p;
        p.id = table.at(r, c_id);
        p.lon = csv::parse_number(table.at(r, c_lon));
        p.lat = csv::parse_number(table.at(r, c_lat));
        p.admin1_id = table.at(r, c_a1);
        p.admin2_id = table.at(r, c_a2);
        p.total_pop = csv::parse_number(table.at(r, c_tot));
        p.target_pop = csv::parse_number(table.at(r, c_tgt));
        if (p.admin1_id.empty() || p.admin2_id.empty()) {
            throw DataError("pixel " + p.id + " is not mapped to an admin2 area");
        }
        if (!(p.total_pop >= 0.0) || !(p.target_pop >= 0.0)) {
            throw DataError("pixel " + p.id + " has a negative or missing population");
        }
        for (std::size_t c : cov_cols) {
            p.covariates.push_back(csv::parse_number(table.at(r, c)));
        }
        out.pixels.push_back(std::move(p));
    }
    return out;
}

PixelTable PixelTable::load(const std::filesystem::path& path) {
    return parse(csv::read_file(path));
}

csv::Table PixelTable::table() const {
    std::vector<std::string> header{"pixel_id", "lon",       "lat",       "admin1_id",
                                    "admin2_id", "total_pop", "target_pop"};
    for (const auto& n : covariate_names) {
        header.push_back(std::string(kCovPrefix) + n);
    }
    csv::Table t(header);
    for (const auto& p : pixels) {
        std::vector<std::string> row{p.id,
                                     csv::format_number(p.lon),
                                     csv::format_number(p.lat),
                                     p.admin1_id,
                                     p.admin2_id,
                                     csv::format_number(p.total_pop),
                                     csv::format_number(p.target_pop)};
        for (double v : p.covariates) {
            row.push_back(csv::format_number(v));
        }
        t.add_row(std::move(row));
    }
    return t;
}

std::map<std::string, double> PixelTable::target_population(Level level) const {
    std::map<std::string, double> out;
    for (const auto& p : pixels) {
        out[p.area(level)] += p.target_pop;
    }
    return out;
}

const UrbanThreshold* UrbanPartition::threshold_for(const std::string& admin1_id) const {
    auto it = std::lower_bound(
        thresholds.begin(), thresholds.end(), admin1_id,
        [](const UrbanThreshold& t, const std::string& id) { return t.admin1_id < id; });
    return it != thresholds.end() && it->admin1_id == admin1_id ? &*it : nullptr;
}

UrbanPartition urban_thresholds(const PixelTable& pixels,
                                const std::map<std::string, double>& reported_fractions) {
    std::map<std::string, std::vector<std::size_t>> by_admin1;
    for (std::size_t i = 0; i < pixels.pixels.size(); ++i) {
        by_admin1[pixels.pixels[i].admin1_id].push_back(i);
    }
    for (const auto& [id, f] : reported_fractions) {
        if (!(f >= 0.0 && f <= 1.0)) {
            throw DataError("reported urban fraction for " + id + " is outside [0, 1]");
        }
        if (!by_admin1.count(id)) {
            throw DataError("admin1 " + id + " has a reported urban fraction but no pixels");
        }
    }
    UrbanPartition part;
    part.urban.assign(pixels.pixels.size(), false);
    for (auto& [id, idx] : by_admin1) {
        auto rf = reported_fractions.find(id);
        if (rf == reported_fractions.end()) {
            throw DataError("no reported urban fraction for admin1 " + id);
        }
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return pixels.pixels[a].total_pop > pixels.pixels[b].total_pop;
        });
        double total = 0.0;
        for (std::size_t i : idx) {
            total += pixels.pixels[i].total_pop;
        }
        if (!(total > 0.0)) {
            throw DataError("admin1 " + id + " has zero total population");
        }
        UrbanThreshold th;
        th.admin1_id = id;
        th.target = rf->second;
        if (th.target > 0.0) {
            double cum = 0.0;
            for (std::size_t i : idx) {
                cum += pixels.pixels[i].total_pop;
                if (cum / total >= th.target - 1e-12) {
                    th.threshold = pixels.pixels[i].total_pop;
                    break;
                }
            }
        }
        double urban_pop = 0.0;
        for (std::size_t i : idx) {
            if (pixels.pixels[i].total_pop >= th.threshold) {
                part.urban[i] = true;
                urban_pop += pixels.pixels[i].total_pop;
                ++th.n_urban;
            }
        }
        th.achieved = urban_pop / total;
        part.thresholds.push_back(th);
    }
    return part;
}

std::vector<UrbanFraction> urban_fractions(const UrbanPartition& partition,
                                           const PixelTable& pixels, Level level,
                                           const std::vector<std::string>& area_ids) {
    std::map<std::string, std::pair<double, double>> sums;  // urban, total target pop
    std::map<std::string, std::string> parent;
    for (std::size_t i = 0; i < pixels.pixels.size(); ++i) {
        const auto& p = pixels.pixels[i];
        auto& s = sums[p.area(level)];
        s.second += p.target_pop;
        if (partition.urban[i]) {
            s.first += p.target_pop;
        }
        parent[p.area(level)] = p.admin1_id;
    }
    std::vector<UrbanFraction> out;
    out.reserve(area_ids.size());
    for (const auto& id : area_ids) {
        UrbanFraction uf;
        uf.area_id = id;
        auto it = sums.find(id);
        if (it == sums.end() || !(it->second.second > 0.0)) {
            uf.flag = "undefined";
        } else {
            uf.q = it->second.first / it->second.second;
            if (const auto* th = partition.threshold_for(parent[id])) {
                uf.achieved_fraction_gap = th->gap();
            }
        }
        out.push_back(uf);
    }
    return out;
}

csv::Table urban_fraction_table(const std::vector<UrbanFraction>& q) {
    csv::Table t({"area_id", "q", "achieved_fraction_gap", "flag"});
    for (const auto& u : q) {
        t.add_row({u.area_id, csv::format_number(u.q), csv::format_number(u.achieved_fraction_gap),
                   u.flag});
    }
    return t;
}

std::vector<UrbanFraction> parse_urban_fraction_table(const csv::Table& table) {
    const auto c_id = table.require("area_id");
    const auto c_q = table.require("q");
    const auto c_gap = table.find("achieved_fraction_gap");
    const auto c_flag = table.find("flag");
    std::vector<UrbanFraction> out;
    for (std::size_t r = 0; r < table.size(); ++r) {
        UrbanFraction u;
        u.area_id = table.at(r, c_id);
        u.q = csv::parse_number(table.at(r, c_q));
        if (c_gap) {
            u.achieved_fraction_gap = csv::parse_number(table.at(r, *c_gap));
        }
        u.flag = c_flag ? table.at(r, *c_flag) : (std::isnan(u.q) ? "undefined" : "ok");
        if (u.flag == "ok" && !(u.q >= 0.0 && u.q <= 1.0)) {
            throw DataError("urban fraction for " + u.area_id + " is outside [0, 1]");
        }
        out.push_back(u);
    }
    return out;
}

std::string_view to_string(StrataConvention c) {
    return c == StrataConvention::rural_share ? "rural_share" : "urban_share";
}

StrataConvention parse_strata_convention(std::string_view s) {
    if (s == "rural_share") {
        return StrataConvention::rural_share;
    }
    if (s == "urban_share") {
        return StrataConvention::urban_share;
    }
    throw ConfigError("unknown strata convention '" + std::string(s) + "'");
}

namespace {

Eigen::ArrayXd expit_array(const Eigen::VectorXd& eta) {
    return eta.unaryExpr([](double v) { return expit(v); }).array();
}

/// Prevalence draws of the urban-share and rural-share strata after applying the convention.
std::pair<Eigen::ArrayXd, Eigen::ArrayXd> strata_prevalence(const PredictorDraws& pd, int area,
                                                            const Eigen::VectorXd* x,
                                                            StrataConvention convention) {
    const Eigen::VectorXd no_gamma = pd.eta(area, Urbanicity::urban, x);
    const Eigen::VectorXd with_gamma = pd.eta(area, Urbanicity::rural, x);
    if (convention == StrataConvention::rural_share) {
        return {expit_array(no_gamma), expit_array(with_gamma)};
    }
    return {expit_array(with_gamma), expit_array(no_gamma)};
}

AreaPosterior empty_like(const PredictorDraws& pd, std::string suffix) {
    AreaPosterior p;
    p.level = pd.level;
    p.model_tag = pd.model_tag + suffix;
    return p;
}

std::string area_flag(const PredictorDraws& pd, std::size_t i) {
    return pd.area_clusters[i] > 0 ? "observed" : "predicted";
}

}  // namespace

AreaPosterior aggregate_stratified(const PredictorDraws& pd, const std::vector<UrbanFraction>& q,
                                   StrataConvention convention,
                                   const std::vector<Eigen::VectorXd>* area_covariates) {
    std::map<std::string, const UrbanFraction*> by_id;
    for (const auto& u : q) {
        by_id[u.area_id] = &u;
    }
    AreaPosterior out = empty_like(pd, "");
    const bool stratified = is_stratified(pd.variant);
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t i = 0; i < pd.area_ids.size(); ++i) {
        const Eigen::VectorXd* x =
            area_covariates ? &(*area_covariates)[i] : nullptr;
        const int area = static_cast<int>(i);
        if (!stratified) {
            rows.push_back(expit_array(pd.eta(area, Urbanicity::urban, x)).matrix());
        } else {
            auto it = by_id.find(pd.area_ids[i]);
            if (it == by_id.end() || it->second->flag != "ok" || std::isnan(it->second->q)) {
                out.excluded.push_back({pd.area_ids[i], "urban_fraction_undefined"});
                continue;
            }
            const double qi = it->second->q;
            const auto [urban, rural] = strata_prevalence(pd, area, x, convention);
            // Exact single-stratum limits at q in {0, 1}.
            Eigen::ArrayXd theta = qi >= 1.0   ? urban
                                   : qi <= 0.0 ? rural
                                               : qi * urban + (1.0 - qi) * rural;
            rows.push_back(theta.matrix());
        }
        out.area_ids.push_back(pd.area_ids[i]);
        out.flags.push_back(area_flag(pd, i));
    }
    out.draws.resize(static_cast<Eigen::Index>(rows.size()), pd.n_draws());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.draws.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    }
    return out;
}

AreaPosterior aggregate_pixel(const PredictorDraws& pd, const PixelTable& pixels,
                              const UrbanPartition& partition, StrataConvention convention) {
    const auto& stdz = pd.standardization;
    std::vector<std::size_t> cov_index;
    for (const auto& name : stdz.names) {
        auto it = std::find(pixels.covariate_names.begin(), pixels.covariate_names.end(), name);
        if (it == pixels.covariate_names.end()) {
            throw DataError("pixel table lacks covariate '" + name + "'" +
                            (pixels.pixels.empty() ? "" : " (pixel " + pixels.pixels[0].id + ")"));
        }
        cov_index.push_back(static_cast<std::size_t>(it - pixels.covariate_names.begin()));
    }
    std::map<std::string, std::vector<std::size_t>> by_area;
    for (std::size_t i = 0; i < pixels.pixels.size(); ++i) {
        by_area[pixels.pixels[i].area(pd.level)].push_back(i);
    }

    AreaPosterior out = empty_like(pd, "");
    const bool stratified = is_stratified(pd.variant);
    const Eigen::Index n_draws = pd.n_draws();
    std::vector<Eigen::ArrayXd> rows;
    for (std::size_t a = 0; a < pd.area_ids.size(); ++a) {
        auto it = by_area.find(pd.area_ids[a]);
        double total = 0.0;
        if (it != by_area.end()) {
            for (std::size_t i : it->second) {
                total += pixels.pixels[i].target_pop;
            }
        }
        if (!(total > 0.0)) {
            out.excluded.push_back({pd.area_ids[a], "no_target_population"});
            continue;
        }
        Eigen::ArrayXd theta = Eigen::ArrayXd::Zero(n_draws);
        for (std::size_t i : it->second) {
            const Pixel& px = pixels.pixels[i];
            if (px.target_pop <= 0.0) {
                continue;
            }
            Eigen::VectorXd x(stdz.size());
            for (int j = 0; j < stdz.size(); ++j) {
                const double v = px.covariates[cov_index[static_cast<std::size_t>(j)]];
                if (!std::isfinite(v)) {
                    throw DataError("pixel " + px.id + " is missing covariate '" +
                                    stdz.names[static_cast<std::size_t>(j)] + "'");
                }
                x[j] = (v - stdz.means[static_cast<std::size_t>(j)]) /
                       stdz.sds[static_cast<std::size_t>(j)];
            }
            const int area = static_cast<int>(a);
            Eigen::ArrayXd prev;
            if (!stratified) {
                prev = expit_array(pd.eta(area, Urbanicity::urban, &x));
            } else {
                const auto [urban, rural] = strata_prevalence(pd, area, &x, convention);
                prev = partition.urban[i] ? urban : rural;
            }
            theta += (px.target_pop / total) * prev;
        }
        rows.push_back(theta);
        out.area_ids.push_back(pd.area_ids[a]);
        out.flags.push_back(area_flag(pd, a));
    }
    out.draws.resize(static_cast<Eigen::Index>(rows.size()), n_draws);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.draws.row(static_cast<Eigen::Index>(r)) = rows[r].matrix().transpose();
    }
    return out;
}

AreaPosterior aggregate_up(const AreaPosterior& fine,
                           const std::map<std::string, std::string>& parent_of,
                           const std::map<std::string, double>& weights, Level coarse_level) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < fine.area_ids.size(); ++i) {
        auto p = parent_of.find(fine.area_ids[i]);
        if (p == parent_of.end()) {
            throw DataError("area " + fine.area_ids[i] + " has no coarse parent");
        }
        auto w = weights.find(fine.area_ids[i]);
        if (w == weights.end() || !(w->second >= 0.0)) {
            throw DataError("missing population weight for area " + fine.area_ids[i]);
        }
        groups[p->second].push_back(i);
    }
    AreaPosterior out;
    out.level = coarse_level;
    out.model_tag = fine.model_tag;
    out.draws.resize(static_cast<Eigen::Index>(groups.size()), fine.draws.cols());
    Eigen::Index r = 0;
    for (const auto& [id, members] : groups) {
        double total = 0.0;
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(fine.draws.cols());
        for (std::size_t i : members) {
            const double w = weights.at(fine.area_ids[i]);
            acc += w * fine.draws.row(static_cast<Eigen::Index>(i));
            total += w;
        }
        if (!(total > 0.0)) {
            throw DataError("coarse area " + id + " has zero population weight");
        }
        out.draws.row(r++) = acc / total;
        out.area_ids.push_back(id);
        out.flags.push_back("aggregated");
    }
    return out;
}

}  // namespace prevmap
