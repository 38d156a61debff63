#include "prevmap/data_model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

namespace prevmap {

int Cluster::positives() const {
    int y = 0;
    for (const auto& r : records) {
        y += r.outcome;
    }
    return y;
}

double Cluster::weight_sum() const {
    double w = 0.0;
    for (const auto& r : records) {
        w += r.weight;
    }
    return w;
}

std::vector<double> Cluster::covariates() const {
    if (records.empty()) {
        return {};
    }
    std::vector<double> mean(records.front().covariates.size(), 0.0);
    for (const auto& r : records) {
        for (std::size_t k = 0; k < mean.size(); ++k) {
            mean[k] += r.covariates[k];
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(records.size());
    }
    return mean;
}

std::size_t SurveyDataset::n_records() const {
    std::size_t n = 0;
    for (const auto& c : clusters) {
        n += c.records.size();
    }
    return n;
}

std::size_t SurveyDataset::n_positive() const {
    std::size_t n = 0;
    for (const auto& c : clusters) {
        n += static_cast<std::size_t>(c.positives());
    }
    return n;
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

Urbanicity parse_urbanicity(std::string_view text, std::size_t row) {
    const std::string v = lower(text);
    if (v == "urban" || v == "u" || v == "1") {
        return Urbanicity::urban;
    }
    if (v == "rural" || v == "r" || v == "0" || v == "2") {
        return Urbanicity::rural;
    }
    throw DataError("row " + std::to_string(row) + ": urbanicity '" + std::string(text) +
                    "' is neither urban nor rural");
}

}  // namespace

SurveyDataset build_dataset(std::vector<IndividualRecord> records,
                            const std::unordered_map<std::string, Cluster>& cluster_meta,
                            std::vector<std::string> covariate_names) {
    SurveyDataset ds;
    ds.covariate_names = std::move(covariate_names);
    std::map<std::string, std::size_t> cluster_pos;
    for (auto& rec : records) {
        auto it = cluster_pos.find(rec.cluster_id);
        if (it == cluster_pos.end()) {
            Cluster c;
            if (auto m = cluster_meta.find(rec.cluster_id); m != cluster_meta.end()) {
                c = m->second;
                c.records.clear();
            }
            c.id = rec.cluster_id;
            c.stratum_id = rec.stratum_id;
            c.urbanicity = rec.urbanicity;
            it = cluster_pos.emplace(rec.cluster_id, ds.clusters.size()).first;
            ds.clusters.push_back(std::move(c));
        }
        Cluster& c = ds.clusters[it->second];
        if (c.stratum_id != rec.stratum_id) {
            throw DataError("cluster " + c.id + " spans strata " + c.stratum_id + " and " +
                            rec.stratum_id);
        }
        if (c.urbanicity != rec.urbanicity) {
            throw DataError("cluster " + c.id + " mixes urban and rural records");
        }
        c.records.push_back(std::move(rec));
    }
    std::map<std::string, int> strata;
    for (const auto& c : ds.clusters) {
        ++strata[c.stratum_id];
    }
    for (const auto& [id, n] : strata) {
        ds.strata.push_back({id, n});
    }
    return ds;
}

SurveyDataset parse_survey(const csv::Table& table, const SurveySchema& schema,
                           Warnings* warnings) {
    const std::size_t c_outcome = table.require(schema.outcome);
    const std::size_t c_weight = table.require(schema.weight);
    const std::size_t c_cluster = table.require(schema.cluster);
    const std::size_t c_stratum = table.require(schema.stratum);
    const std::size_t c_urban = table.require(schema.urban);
    std::optional<std::size_t> c_admin1, c_admin2, c_lon, c_lat;
    if (!schema.admin1.empty()) {
        c_admin1 = table.require(schema.admin1);
    }
    if (!schema.admin2.empty()) {
        c_admin2 = table.require(schema.admin2);
    }
    if (!schema.lon.empty() || !schema.lat.empty()) {
        c_lon = table.require(schema.lon);
        c_lat = table.require(schema.lat);
    }
    std::vector<std::size_t> c_cov;
    for (const auto& name : schema.covariates) {
        c_cov.push_back(table.require(name));
    }
    if (table.empty()) {
        throw DataError("no records");
    }

    std::vector<IndividualRecord> records;
    records.reserve(table.size());
    std::unordered_map<std::string, Cluster> meta;
    std::size_t dropped = 0;
    for (std::size_t r = 0; r < table.size(); ++r) {
        const std::size_t row = r + 1;
        auto field = [&](std::size_t c) -> const std::string& { return table.at(r, c); };
        IndividualRecord rec;
        double y = 0.0;
        try {
            y = csv::parse_number(field(c_outcome));
        } catch (const DataError&) {
            y = kNaN;
        }
        if (!(y == 0.0 || y == 1.0)) {
            throw DataError("row " + std::to_string(row) + ": outcome '" + field(c_outcome) +
                            "' is not binary (0/1)");
        }
        rec.outcome = static_cast<int>(y);
        double w = kNaN;
        try {
            w = csv::parse_number(field(c_weight));
        } catch (const DataError&) {
        }
        if (!(w > 0.0) || !std::isfinite(w)) {
            throw DataError("row " + std::to_string(row) + ": weight '" + field(c_weight) +
                            "' must be positive");
        }
        rec.weight = w;
        rec.cluster_id = field(c_cluster);
        rec.stratum_id = field(c_stratum);
        if (rec.cluster_id.empty()) {
            throw DataError("row " + std::to_string(row) + ": empty cluster id");
        }
        rec.urbanicity = parse_urbanicity(field(c_urban), row);
        bool missing = false;
        for (std::size_t k = 0; k < c_cov.size(); ++k) {
            const double v = csv::parse_number(field(c_cov[k]));
            if (std::isnan(v)) {
                missing = true;
            }
            rec.covariates.push_back(v);
        }
        if (missing) {
            ++dropped;
            continue;
        }

        Cluster probe;
        probe.id = rec.cluster_id;
        if (c_admin1) {
            probe.recorded_admin1_id = field(*c_admin1);
            probe.admin1_id = probe.recorded_admin1_id;
        }
        if (c_admin2) {
            probe.admin2_id = field(*c_admin2);
        }
        if (c_lon) {
            const double lon = csv::parse_number(field(*c_lon));
            const double lat = csv::parse_number(field(*c_lat));
            if (std::isfinite(lon) && std::isfinite(lat)) {
                probe.location = geometry::Point{lon, lat};
            }
        }
        auto [it, inserted] = meta.emplace(rec.cluster_id, probe);
        if (!inserted) {
            const Cluster& prev = it->second;
            if (prev.recorded_admin1_id != probe.recorded_admin1_id ||
                prev.admin2_id != probe.admin2_id || prev.location != probe.location) {
                throw DataError("row " + std::to_string(row) + ": cluster " + rec.cluster_id +
                                " has inconsistent area labels or coordinates");
            }
        }
        records.push_back(std::move(rec));
    }
    if (records.empty()) {
        throw DataError("no records (all rows dropped for missing covariates)");
    }
    SurveyDataset ds = build_dataset(std::move(records), meta, schema.covariates);
    ds.dropped_missing_covariates = dropped;
    if (dropped > 0 && warnings) {
        warnings->add(std::to_string(dropped) + " record(s) dropped for missing covariate values");
    }
    return ds;
}

SurveyDataset load_survey(const std::filesystem::path& path, const SurveySchema& schema,
                          Warnings* warnings) {
    try {
        return parse_survey(csv::read_file(path), schema, warnings);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

SurveySchema canonical_schema(const std::vector<std::string>& covariate_names) {
    SurveySchema s;
    s.outcome = "outcome";
    s.weight = "weight";
    s.cluster = "cluster";
    s.stratum = "stratum";
    s.urban = "urban";
    s.admin1 = "admin1";
    s.admin2 = "admin2";
    s.lon = "lon";
    s.lat = "lat";
    s.covariates = covariate_names;
    return s;
}

csv::Table survey_table(const SurveyDataset& dataset) {
    std::vector<std::string> header = {"outcome", "weight", "cluster", "stratum", "urban",
                                       "admin1",  "admin2", "lon",     "lat"};
    for (const auto& name : dataset.covariate_names) {
        header.push_back(name);
    }
    csv::Table t(header);
    for (const auto& c : dataset.clusters) {
        for (const auto& r : c.records) {
            std::vector<std::string> row = {
                std::to_string(r.outcome),
                csv::format_number(r.weight),
                c.id,
                c.stratum_id,
                std::string(to_string(c.urbanicity)),
                c.admin1_id,
                c.admin2_id,
                c.location ? csv::format_number(c.location->x) : "NA",
                c.location ? csv::format_number(c.location->y) : "NA"};
            for (double v : r.covariates) {
                row.push_back(csv::format_number(v));
            }
            t.add_row(std::move(row));
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Geography

Geography::Geography(std::vector<Area> admin1, std::vector<Area> admin2)
    : admin1_(std::move(admin1)), admin2_(std::move(admin2)) {
    auto by_id = [](const Area& a, const Area& b) { return a.id < b.id; };
    std::sort(admin1_.begin(), admin1_.end(), by_id);
    std::sort(admin2_.begin(), admin2_.end(), by_id);
    for (std::size_t i = 0; i < admin1_.size(); ++i) {
        if (!admin1_index_.emplace(admin1_[i].id, i).second) {
            throw DataError("duplicate admin1 area id " + admin1_[i].id);
        }
    }
    for (std::size_t i = 0; i < admin2_.size(); ++i) {
        if (!admin2_index_.emplace(admin2_[i].id, i).second) {
            throw DataError("duplicate admin2 area id " + admin2_[i].id);
        }
        auto p = admin1_index_.find(admin2_[i].parent_id);
        if (p == admin1_index_.end()) {
            throw DataError("admin2 area " + admin2_[i].id + " has unknown parent '" +
                            admin2_[i].parent_id + "'");
        }
        parent_.push_back(p->second);
    }
    for (const auto* list : {&admin1_, &admin2_}) {
        for (const auto& a : *list) {
            for (const auto& ring : a.rings) {
                if (!geometry::is_closed(ring)) {
                    throw DataError("area " + a.id + " has an unclosed polygon ring");
                }
            }
        }
    }
}

std::optional<std::size_t> Geography::index_of(Level level, const std::string& id) const {
    const auto& index = level == Level::admin1 ? admin1_index_ : admin2_index_;
    if (auto it = index.find(id); it != index.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::size_t Geography::require_index(Level level, const std::string& id) const {
    if (auto i = index_of(level, id)) {
        return *i;
    }
    throw DataError("unknown " + std::string(to_string(level)) + " area '" + id + "'");
}

std::vector<std::string> Geography::ids(Level level) const {
    std::vector<std::string> out;
    for (const auto& a : areas(level)) {
        out.push_back(a.id);
    }
    return out;
}

namespace {

geometry::Ring parse_ring(const nlohmann::json& coords) {
    geometry::Ring ring;
    for (const auto& pt : coords) {
        ring.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    }
    return ring;
}

std::string property_string(const nlohmann::json& props, const char* key) {
    if (!props.contains(key) || props[key].is_null()) {
        return {};
    }
    const auto& v = props[key];
    if (v.is_string()) {
        return v.get<std::string>();
    }
    return v.dump();
}

}  // namespace

Geography parse_geography(std::string_view geojson) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(geojson);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid GeoJSON: ") + e.what());
    }
    if (doc.value("type", "") != "FeatureCollection") {
        throw DataError("GeoJSON root must be a FeatureCollection");
    }
    std::vector<Area> admin1, admin2;
    std::set<std::string> admin1_ids;
    for (const auto& feature : doc.at("features")) {
        const auto& props = feature.at("properties");
        Area area;
        area.id = property_string(props, "area_id");
        if (area.id.empty()) {
            throw DataError("GeoJSON feature without area_id");
        }
        area.level = parse_level(property_string(props, "level"));
        area.parent_id = property_string(props, "parent_id");
        const auto& geom = feature.at("geometry");
        if (!geom.is_null()) {
            const std::string type = geom.at("type").get<std::string>();
            if (type == "Polygon") {
                for (const auto& ring : geom.at("coordinates")) {
                    area.rings.push_back(parse_ring(ring));
                }
            } else if (type == "MultiPolygon") {
                for (const auto& poly : geom.at("coordinates")) {
                    for (const auto& ring : poly) {
                        area.rings.push_back(parse_ring(ring));
                    }
                }
            } else {
                throw DataError("area " + area.id + ": unsupported geometry type " + type);
            }
        }
        if (area.level == Level::admin1) {
            admin1_ids.insert(area.id);
            admin1.push_back(std::move(area));
        } else {
            if (area.parent_id.empty()) {
                throw DataError("admin2 area " + area.id + " has no parent_id");
            }
            admin2.push_back(std::move(area));
        }
    }
    // Admin1 areas may be implied by parent ids alone.
    for (const auto& a : admin2) {
        if (admin1_ids.insert(a.parent_id).second) {
            Area parent;
            parent.id = a.parent_id;
            parent.level = Level::admin1;
            admin1.push_back(std::move(parent));
        }
    }
    return Geography(std::move(admin1), std::move(admin2));
}

Geography load_geography(const std::filesystem::path& path) {
    try {
        return parse_geography(csv::read_text(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string geography_to_geojson(const Geography& geo) {
    nlohmann::json features = nlohmann::json::array();
    for (Level level : {Level::admin1, Level::admin2}) {
        for (const auto& a : geo.areas(level)) {
            nlohmann::json f;
            f["type"] = "Feature";
            f["properties"] = {{"area_id", a.id}, {"level", std::string(to_string(level))}};
            if (level == Level::admin2) {
                f["properties"]["parent_id"] = a.parent_id;
            }
            if (a.rings.empty()) {
                f["geometry"] = nullptr;
            } else {
                nlohmann::json polys = nlohmann::json::array();
                for (const auto& ring : a.rings) {
                    nlohmann::json r = nlohmann::json::array();
                    for (const auto& p : ring) {
                        r.push_back({p.x, p.y});
                    }
                    polys.push_back(nlohmann::json::array({r}));
                }
                f["geometry"] = {{"type", "MultiPolygon"}, {"coordinates", polys}};
            }
            features.push_back(std::move(f));
        }
    }
    nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", features}};
    return doc.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// Assignment

std::string_view to_string(AssignmentStatus s) {
    switch (s) {
    case AssignmentStatus::assigned: return "assigned";
    case AssignmentStatus::reassigned: return "reassigned";
    case AssignmentStatus::unassigned: return "unassigned";
    case AssignmentStatus::no_location: return "no_location";
    case AssignmentStatus::recorded: return "recorded";
    }
    return "unknown";
}

std::size_t AssignmentResult::count(AssignmentStatus s) const {
    return static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [s](const AssignmentEntry& e) { return e.status == s; }));
}

AssignmentResult assign_clusters(const SurveyDataset& dataset, const Geography& geography) {
    AssignmentResult result;
    result.dataset.covariate_names = dataset.covariate_names;
    result.dataset.dropped_missing_covariates = dataset.dropped_missing_covariates;
    const auto& admin2 = geography.areas(Level::admin2);
    const auto& parent = geography.parent_index();
    const auto& admin1 = geography.areas(Level::admin1);

    for (const auto& cluster : dataset.clusters) {
        AssignmentEntry entry;
        entry.cluster_id = cluster.id;
        entry.recorded_admin1_id = cluster.recorded_admin1_id;
        Cluster out = cluster;

        if (!cluster.location) {
            // Fall back on survey-recorded admin2 labels when present.
            if (!cluster.admin2_id.empty()) {
                const std::size_t i2 = geography.require_index(Level::admin2, cluster.admin2_id);
                out.admin1_id = admin1[parent[i2]].id;
                entry.status = AssignmentStatus::recorded;
                entry.admin2_id = out.admin2_id;
                entry.admin1_id = out.admin1_id;
                result.dataset.clusters.push_back(std::move(out));
            } else {
                entry.status = AssignmentStatus::no_location;
                result.warnings.add("cluster " + cluster.id + " has no coordinates; skipped");
            }
            result.entries.push_back(std::move(entry));
            continue;
        }

        const geometry::Point p = *cluster.location;
        // admin2 is sorted by id, so the first hit is the smallest id (edge tie-break).
        std::optional<std::size_t> hit;
        for (std::size_t i = 0; i < admin2.size() && !hit; ++i) {
            if (geometry::contains(admin2[i].rings, p) ||
                geometry::on_boundary(admin2[i].rings, p)) {
                hit = i;
            }
        }
        if (!hit) {
            entry.status = AssignmentStatus::unassigned;
            result.warnings.add("cluster " + cluster.id + " lies outside all admin2 polygons");
            result.entries.push_back(std::move(entry));
            continue;
        }

        std::size_t chosen = *hit;
        const std::string& recorded = cluster.recorded_admin1_id;
        if (!recorded.empty() && admin1[parent[chosen]].id != recorded) {
            const auto rec_idx = geography.index_of(Level::admin1, recorded);
            std::optional<std::size_t> best;
            double best_d = kInf;
            if (rec_idx) {
                for (std::size_t i = 0; i < admin2.size(); ++i) {
                    if (parent[i] != *rec_idx || admin2[i].rings.empty()) {
                        continue;
                    }
                    const double d = geometry::boundary_distance(admin2[i].rings, p);
                    if (d < best_d) {
                        best_d = d;
                        best = i;
                    }
                }
            }
            if (!best) {
                throw DataError("cluster " + cluster.id + " cannot be assigned within recorded admin1 '" +
                                recorded + "'");
            }
            chosen = *best;
            entry.status = AssignmentStatus::reassigned;
            entry.boundary_distance = best_d;
        }
        out.admin2_id = admin2[chosen].id;
        out.admin1_id = admin1[parent[chosen]].id;
        entry.admin2_id = out.admin2_id;
        entry.admin1_id = out.admin1_id;
        result.entries.push_back(std::move(entry));
        result.dataset.clusters.push_back(std::move(out));
    }

    std::map<std::string, int> strata;
    for (const auto& c : result.dataset.clusters) {
        ++strata[c.stratum_id];
    }
    for (const auto& [id, n] : strata) {
        result.dataset.strata.push_back({id, n});
    }
    return result;
}

csv::Table assignment_table(const AssignmentResult& result) {
    csv::Table t({"cluster_id", "admin1_id", "admin2_id", "recorded_admin1_id", "status",
                  "boundary_distance"});
    for (const auto& e : result.entries) {
        t.add_row({e.cluster_id, e.admin1_id, e.admin2_id, e.recorded_admin1_id,
                   std::string(to_string(e.status)), csv::format_number(e.boundary_distance)});
    }
    return t;
}

// ---------------------------------------------------------------------------
// Validation

double median(std::vector<double> values) {
    if (values.empty()) {
        return kNaN;
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) {
        return values[n / 2];
    }
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ValidationReport validate(const SurveyDataset& dataset, const Geography& geography,
                          const std::map<std::string, double>& population_urban_fractions) {
    ValidationReport rep;
    for (Level level : {Level::admin1, Level::admin2}) {
        auto& counts = level == Level::admin1 ? rep.admin1_counts : rep.admin2_counts;
        for (const auto& a : geography.areas(level)) {
            counts.push_back({a.id, level, 0, 0, 0});
        }
    }
    double wy_u = 0, w_u = 0, wy_r = 0, w_r = 0;
    for (const auto& c : dataset.clusters) {
        rep.total_clusters += 1;
        rep.total_individuals += c.records.size();
        for (Level level : {Level::admin1, Level::admin2}) {
            const std::string& id = dataset.area_of(c, level);
            if (id.empty()) {
                continue;
            }
            auto idx = geography.index_of(level, id);
            if (!idx) {
                continue;
            }
            auto& row = (level == Level::admin1 ? rep.admin1_counts : rep.admin2_counts)[*idx];
            row.n_clusters += 1;
            row.n_individuals += c.size();
            if (c.urbanicity == Urbanicity::urban) {
                row.n_urban_clusters += 1;
            }
        }
        for (const auto& r : c.records) {
            if (c.urbanicity == Urbanicity::urban) {
                wy_u += r.weight * r.outcome;
                w_u += r.weight;
            } else {
                wy_r += r.weight * r.outcome;
                w_r += r.weight;
            }
        }
    }
    for (const auto& row : rep.admin2_counts) {
        if (row.n_clusters == 0) {
            rep.zero_cluster_areas.push_back(row.area_id);
        } else if (row.n_clusters == 1) {
            rep.one_cluster_areas.push_back(row.area_id);
        }
    }
    for (const auto& row : rep.admin1_counts) {
        UrbanSamplingRow u;
        u.admin1_id = row.area_id;
        u.n_clusters = row.n_clusters;
        if (row.n_clusters > 0) {
            u.sampled_urban_fraction = static_cast<double>(row.n_urban_clusters) / row.n_clusters;
        }
        if (auto it = population_urban_fractions.find(row.area_id);
            it != population_urban_fractions.end()) {
            u.population_urban_fraction = it->second;
        }
        rep.urban_sampling.push_back(u);
    }
    if (w_u > 0) {
        rep.weighted_urban_prevalence = wy_u / w_u;
    }
    if (w_r > 0) {
        rep.weighted_rural_prevalence = wy_r / w_r;
    }
    const double pu = rep.weighted_urban_prevalence;
    const double pr = rep.weighted_rural_prevalence;
    if (pu > 0 && pu < 1 && pr > 0 && pr < 1) {
        rep.weighted_log_odds_ratio = std::log((pu / (1 - pu)) / (pr / (1 - pr)));
    }
    auto collect = [](const std::vector<AreaCount>& rows, bool individuals) {
        std::vector<double> v;
        for (const auto& r : rows) {
            v.push_back(individuals ? r.n_individuals : r.n_clusters);
        }
        return v;
    };
    rep.median_clusters_admin1 = median(collect(rep.admin1_counts, false));
    rep.median_clusters_admin2 = median(collect(rep.admin2_counts, false));
    rep.median_individuals_admin1 = median(collect(rep.admin1_counts, true));
    rep.median_individuals_admin2 = median(collect(rep.admin2_counts, true));
    return rep;
}

csv::Table validation_counts_table(const ValidationReport& report) {
    csv::Table t({"level", "area_id", "n_clusters", "n_urban_clusters", "n_individuals"});
    for (const auto* rows : {&report.admin1_counts, &report.admin2_counts}) {
        for (const auto& r : *rows) {
            t.add_row({std::string(to_string(r.level)), r.area_id, std::to_string(r.n_clusters),
                       std::to_string(r.n_urban_clusters), std::to_string(r.n_individuals)});
        }
    }
    return t;
}

csv::Table validation_urban_table(const ValidationReport& report) {
    csv::Table t({"admin1_id", "n_clusters", "sampled_urban_fraction", "population_urban_fraction"});
    for (const auto& u : report.urban_sampling) {
        t.add_row({u.admin1_id, std::to_string(u.n_clusters),
                   csv::format_number(u.sampled_urban_fraction),
                   csv::format_number(u.population_urban_fraction)});
    }
    return t;
}

std::string validation_summary(const ValidationReport& report) {
    std::ostringstream os;
    os << "clusters: " << report.total_clusters << "\n";
    os << "individuals: " << report.total_individuals << "\n";
    os << "median clusters per admin1 area: " << report.median_clusters_admin1 << "\n";
    os << "median clusters per admin2 area: " << report.median_clusters_admin2 << "\n";
    os << "median individuals per admin1 area: " << report.median_individuals_admin1 << "\n";
    os << "median individuals per admin2 area: " << report.median_individuals_admin2 << "\n";
    os << "admin2 areas without clusters (" << report.zero_cluster_areas.size() << "):";
    for (const auto& id : report.zero_cluster_areas) {
        os << ' ' << id;
    }
    os << "\nadmin2 areas with one cluster (" << report.one_cluster_areas.size() << "):";
    for (const auto& id : report.one_cluster_areas) {
        os << ' ' << id;
    }
    os << "\n";
    int oversampled = 0, compared = 0;
    for (const auto& u : report.urban_sampling) {
        if (std::isfinite(u.sampled_urban_fraction) && std::isfinite(u.population_urban_fraction)) {
            ++compared;
            if (u.sampled_urban_fraction > u.population_urban_fraction) {
                ++oversampled;
            }
        }
    }
    os << "admin1 areas with urban clusters over-sampled: " << oversampled << " of " << compared
       << "\n";
    os << "weighted prevalence urban/rural: " << csv::format_number(report.weighted_urban_prevalence)
       << " / " << csv::format_number(report.weighted_rural_prevalence) << "\n";
    os << "weighted urban vs rural log odds ratio: "
       << csv::format_number(report.weighted_log_odds_ratio) << " (odds ratio "
       << csv::format_number(std::exp(report.weighted_log_odds_ratio)) << ")\n";
    return os.str();
}

std::map<std::string, double> load_urban_fractions(const std::filesystem::path& path) {
    const auto t = csv::read_file(path);
    const std::size_t c_id = t.require("admin1_id");
    const std::size_t c_f = t.require("urban_fraction");
    std::map<std::string, double> out;
    for (std::size_t r = 0; r < t.size(); ++r) {
        const double f = csv::parse_number(t.at(r, c_f));
        if (!(f >= 0.0 && f <= 1.0)) {
            throw DataError(path.string() + ": urban fraction outside [0,1] for " + t.at(r, c_id));
        }
        out[t.at(r, c_id)] = f;
    }
    return out;
}

}  // namespace prevmap
