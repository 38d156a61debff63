#include "prevmap/simulate.hpp"

#include "prevmap/spatial.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <set>

namespace prevmap::sim {

namespace {

geometry::Ring rectangle(double x0, double y0, double x1, double y1) {
    return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}};
}

int uniform_int(Rng& rng, int lo, int hi) {
    const double u = uniform01(rng);
    return std::min(hi, lo + static_cast<int>(std::floor(u * (hi - lo + 1))));
}

/// Fisher-Yates driven by uniform01, so the order does not depend on library distributions.
void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
        std::swap(v[i - 1], v[j]);
    }
}

double gamma_draw(Rng& rng, double shape) {
    std::gamma_distribution<double> g(shape, 1.0);
    return g(rng);
}

std::pair<geometry::Point, geometry::Point> bounding_box(const Area& a) {
    geometry::Point lo{kInf, kInf}, hi{-kInf, -kInf};
    for (const auto& ring : a.rings) {
        for (const auto& p : ring) {
            lo.x = std::min(lo.x, p.x);
            lo.y = std::min(lo.y, p.y);
            hi.x = std::max(hi.x, p.x);
            hi.y = std::max(hi.y, p.y);
        }
    }
    return {lo, hi};
}

}  // namespace

Geography grid_geography(int n_admin1, int admin2_per_admin1) {
    if (n_admin1 < 1 || admin2_per_admin1 < 1) {
        throw ParameterError("grid geography needs at least one area per level");
    }
    std::vector<Area> a1, a2;
    const int w1 = static_cast<int>(std::to_string(n_admin1).size());
    const int w2 = static_cast<int>(std::to_string(admin2_per_admin1).size());
    auto pad = [](int v, int w) {
        std::string s = std::to_string(v);
        return std::string(static_cast<std::size_t>(w) - std::min<std::size_t>(s.size(), w), '0') + s;
    };
    for (int a = 0; a < n_admin1; ++a) {
        Area p;
        p.id = "A" + pad(a + 1, w1);
        p.level = Level::admin1;
        p.rings.push_back(rectangle(a, 0, a + 1, admin2_per_admin1));
        for (int r = 0; r < admin2_per_admin1; ++r) {
            Area c;
            c.id = p.id + "_" + pad(r + 1, w2);
            c.level = Level::admin2;
            c.parent_id = p.id;
            c.rings.push_back(rectangle(a, r, a + 1, r + 1));
            a2.push_back(std::move(c));
        }
        a1.push_back(std::move(p));
    }
    return Geography(std::move(a1), std::move(a2));
}

void PopulationParams::check() const {
    auto fail = [](const std::string& m) { throw ParameterError("population parameters: " + m); };
    if (eas_per_admin2 < 2) fail("eas_per_admin2 must be at least 2");
    if (!(sigma >= 0.0) || !(admin1_sd >= 0.0)) fail("standard deviations must be non-negative");
    if (!(phi >= 0.0 && phi <= 1.0)) fail("phi must lie in [0, 1]");
    if (!(overdispersion >= 0.0 && overdispersion < 1.0)) fail("overdispersion must lie in [0, 1)");
    if (!(urban_share_min >= 0.0 && urban_share_min <= urban_share_max && urban_share_max <= 1.0))
        fail("urban share range must satisfy 0 <= min <= max <= 1");
    if (urban_households_min < 1 || rural_households_min < 1 ||
        urban_households_max < urban_households_min || rural_households_max < rural_households_min)
        fail("household ranges must be positive and ordered");
    if (!(people_per_household > 0.0)) fail("people_per_household must be positive");
    for (double v : {alpha, gamma, beta}) {
        if (!std::isfinite(v)) fail("effects must be finite");
    }
}

std::vector<std::string> SyntheticPopulation::covariate_names() const {
    return params.covariate ? std::vector<std::string>{"x1"} : std::vector<std::string>{};
}

PixelTable SyntheticPopulation::pixels() const {
    PixelTable t;
    t.covariate_names = covariate_names();
    for (const auto& ea : eas) {
        Pixel p;
        p.id = "px_" + ea.id;
        p.lon = ea.location.x;
        p.lat = ea.location.y;
        p.admin1_id = ea.admin1_id;
        p.admin2_id = ea.admin2_id;
        p.total_pop = ea.households * params.people_per_household;
        p.target_pop = ea.households;
        if (params.covariate) {
            p.covariates.push_back(ea.covariate);
        }
        t.pixels.push_back(std::move(p));
    }
    return t;
}

std::map<std::string, double> SyntheticPopulation::reported_urban_fractions() const {
    std::map<std::string, std::pair<double, double>> acc;
    for (const auto& ea : eas) {
        auto& a = acc[ea.admin1_id];
        a.second += ea.households;
        if (ea.urbanicity == Urbanicity::urban) {
            a.first += ea.households;
        }
    }
    std::map<std::string, double> out;
    for (const auto& [id, a] : acc) {
        out[id] = a.first / a.second;
    }
    return out;
}

std::vector<UrbanFraction> SyntheticPopulation::true_urban_fractions(Level level) const {
    const auto& shares = level == Level::admin1 ? admin1_urban_share : admin2_urban_share;
    std::vector<UrbanFraction> out;
    for (const auto& [id, q] : shares) {
        UrbanFraction u;
        u.area_id = id;
        u.q = q;
        u.achieved_fraction_gap = 0.0;
        out.push_back(u);
    }
    return out;
}

SyntheticPopulation gen_population(const PopulationParams& params, const Geography& geography,
                                   std::uint64_t seed) {
    params.check();
    if (geography.size(Level::admin2) == 0) {
        throw ParameterError("population needs admin2 areas");
    }
    SyntheticPopulation pop;
    pop.params = params;
    pop.geography = geography;
    const auto& areas = geography.areas(Level::admin2);
    const std::size_t m = areas.size();
    const std::size_t n1 = geography.size(Level::admin1);

    Rng field_rng(substream_seed(seed, "field"));
    pop.u.assign(m, 0.0);
    if (params.sigma > 0.0) {
        const ScaledIcar icar = scale_icar(build_adjacency(geography, Level::admin2));
        const Eigen::MatrixXd cov = bym2_covariance(icar, params.sigma, params.phi);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        Eigen::VectorXd z(static_cast<Eigen::Index>(m));
        for (auto& v : z) {
            v = standard_normal(field_rng);
        }
        const Eigen::VectorXd u = es.eigenvectors() * root.cwiseProduct(z);
        // Graph nodes are the admin2 ids in geography order.
        for (std::size_t i = 0; i < m; ++i) {
            pop.u[i] = u[static_cast<Eigen::Index>(i)];
        }
    }
    pop.admin1_effect.assign(n1, 0.0);
    for (auto& e : pop.admin1_effect) {
        e = params.admin1_sd * standard_normal(field_rng);
    }

    Rng rng(substream_seed(seed, "eas"));
    const int n_ea = params.eas_per_admin2;
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_ea))));
    for (std::size_t i = 0; i < m; ++i) {
        const Area& area = areas[i];
        const std::size_t a = geography.parent_index()[i];
        const double share =
            params.urban_share_min + (params.urban_share_max - params.urban_share_min) * uniform01(rng);
        const int n_urban = std::clamp(static_cast<int>(std::lround(share * n_ea)), 1, n_ea - 1);
        const auto [lo, hi] = bounding_box(area);
        for (int k = 0; k < n_ea; ++k) {
            EnumerationArea ea;
            ea.id = area.id + "_e" + std::to_string(k + 1);
            ea.admin1_id = area.parent_id;
            ea.admin2_id = area.id;
            ea.urbanicity = k < n_urban ? Urbanicity::urban : Urbanicity::rural;
            ea.households = ea.urbanicity == Urbanicity::urban
                                ? uniform_int(rng, params.urban_households_min, params.urban_households_max)
                                : uniform_int(rng, params.rural_households_min, params.rural_households_max);
            ea.covariate = params.covariate ? standard_normal(rng) : 0.0;
            ea.location = {lo.x + (hi.x - lo.x) * ((k % side) + 0.5) / side,
                           lo.y + (hi.y - lo.y) * ((k / side) + 0.5) / side};
            if (!geometry::contains(area.rings, ea.location)) {
                ea.location = {0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y)};
            }
            const double eta = params.alpha + pop.admin1_effect[a] +
                               (ea.urbanicity == Urbanicity::rural ? params.gamma : 0.0) +
                               params.beta * ea.covariate + pop.u[i];
            double p = expit(eta);
            if (params.overdispersion > 0.0) {
                const double scale = (1.0 - params.overdispersion) / params.overdispersion;
                const double ga = gamma_draw(rng, p * scale);
                const double gb = gamma_draw(rng, (1.0 - p) * scale);
                p = ga / (ga + gb);
            }
            ea.prevalence = std::clamp(p, 1e-12, 1.0 - 1e-12);
            pop.eas.push_back(std::move(ea));
        }
    }

    std::map<std::string, std::array<double, 3>> a2, a1;  // households, positives, urban households
    double nat_h = 0.0, nat_p = 0.0;
    for (const auto& ea : pop.eas) {
        for (auto* acc : {&a2[ea.admin2_id], &a1[ea.admin1_id]}) {
            (*acc)[0] += ea.households;
            (*acc)[1] += ea.households * ea.prevalence;
            (*acc)[2] += ea.urbanicity == Urbanicity::urban ? ea.households : 0.0;
        }
        nat_h += ea.households;
        nat_p += ea.households * ea.prevalence;
    }
    for (const auto& [id, v] : a2) {
        pop.admin2_truth[id] = v[1] / v[0];
        pop.admin2_urban_share[id] = v[2] / v[0];
        pop.admin2_households[id] = v[0];
    }
    for (const auto& [id, v] : a1) {
        pop.admin1_truth[id] = v[1] / v[0];
        pop.admin1_urban_share[id] = v[2] / v[0];
    }
    pop.national_truth = nat_p / nat_h;
    return pop;
}

void DesignSpec::check() const {
    if (clusters_per_admin1 < 2 && clusters_per_stratum.empty()) {
        throw ParameterError("design needs at least 2 clusters per admin1");
    }
    if (households_per_cluster < 1) {
        throw ParameterError("design needs at least 1 household per cluster");
    }
    if (!(urban_oversampling > 0.0) || !(max_urban_share > 0.0 && max_urban_share < 1.0)) {
        throw ParameterError("urban oversampling must be positive and max share in (0, 1)");
    }
    for (const auto& [id, n] : clusters_per_stratum) {
        if (n < 1) {
            throw ParameterError("stratum " + id + " needs at least 1 cluster");
        }
    }
}

std::map<std::string, int> allocate(const SyntheticPopulation& population, const DesignSpec& design) {
    design.check();
    std::map<std::string, std::array<int, 2>> eas;  // urban, rural EA counts per admin1
    for (const auto& ea : population.eas) {
        eas[ea.admin1_id][ea.urbanicity == Urbanicity::urban ? 0 : 1]++;
    }
    std::map<std::string, int> out;
    for (const auto& [id, c] : eas) {
        const int n = design.clusters_per_admin1;
        const double pop_share = static_cast<double>(c[0]) / (c[0] + c[1]);
        const double share = std::min(design.max_urban_share, design.urban_oversampling * pop_share);
        const int nu = std::clamp(static_cast<int>(std::lround(share * n)), 1, n - 1);
        out[id + "_urban"] = nu;
        out[id + "_rural"] = n - nu;
    }
    for (const auto& [id, n] : design.clusters_per_stratum) {
        out[id] = n;
    }
    return out;
}

namespace {

/// Splits units into certainty selections and the remaining systematic draw size.
std::vector<bool> certainty_units(const std::vector<double>& sizes, int& n) {
    std::vector<bool> certain(sizes.size(), false);
    for (bool changed = true; changed && n > 0;) {
        changed = false;
        double total = 0.0;
        for (std::size_t j = 0; j < sizes.size(); ++j) {
            if (!certain[j]) {
                total += sizes[j];
            }
        }
        for (std::size_t j = 0; j < sizes.size() && n > 0; ++j) {
            if (!certain[j] && sizes[j] > 0.0 && n * sizes[j] >= total) {
                certain[j] = true;
                --n;
                changed = true;
                break;
            }
        }
    }
    return certain;
}

}  // namespace

std::vector<double> pps_inclusion(const std::vector<double>& sizes, int n) {
    for (double s : sizes) {
        if (!(s >= 0.0)) {
            throw ParameterError("PPS sizes must be non-negative");
        }
    }
    const auto positive = std::count_if(sizes.begin(), sizes.end(), [](double s) { return s > 0.0; });
    if (n < 0 || n > positive) {
        throw DataError("requested " + std::to_string(n) + " PPS selections from " +
                        std::to_string(positive) + " units");
    }
    int rest = n;
    const auto certain = certainty_units(sizes, rest);
    double total = 0.0;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
        if (!certain[j]) {
            total += sizes[j];
        }
    }
    std::vector<double> pi(sizes.size(), 0.0);
    for (std::size_t j = 0; j < sizes.size(); ++j) {
        pi[j] = certain[j] ? 1.0 : (total > 0.0 ? rest * sizes[j] / total : 0.0);
    }
    return pi;
}

std::vector<std::size_t> systematic_pps(const std::vector<double>& sizes, int n, Rng& rng,
                                        std::vector<double>* inclusion) {
    const std::vector<double> pi = pps_inclusion(sizes, n);
    int rest = n;
    const auto certain = certainty_units(sizes, rest);
    std::vector<std::size_t> chosen;
    std::vector<std::size_t> order;
    double total = 0.0;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
        if (certain[j]) {
            chosen.push_back(j);
        } else {
            order.push_back(j);
            total += sizes[j];
        }
    }
    shuffle(order, rng);
    if (rest > 0) {
        const double step = total / rest;
        double point = uniform01(rng) * step;
        double cum = 0.0;
        int taken = 0;
        for (std::size_t j : order) {
            cum += sizes[j];
            while (taken < rest && point < cum) {
                chosen.push_back(j);
                ++taken;
                point += step;
            }
        }
    }
    std::sort(chosen.begin(), chosen.end());
    if (inclusion) {
        inclusion->clear();
        for (std::size_t j : chosen) {
            inclusion->push_back(pi[j]);
        }
    }
    return chosen;
}

SurveyDataset draw_sample(const SyntheticPopulation& population, const DesignSpec& design,
                          std::uint64_t seed) {
    const auto alloc = allocate(population, design);
    std::map<std::string, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < population.eas.size(); ++i) {
        const auto& ea = population.eas[i];
        strata[ea.admin1_id + "_" + std::string(to_string(ea.urbanicity))].push_back(i);
    }
    for (const auto& [id, n] : alloc) {
        const auto it = strata.find(id);
        const std::size_t available = it == strata.end() ? 0 : it->second.size();
        if (static_cast<std::size_t>(n) > available) {
            throw DataError("stratum " + id + " has " + std::to_string(available) +
                            " EAs but " + std::to_string(n) + " clusters were requested");
        }
    }
    const bool with_cov = population.params.covariate;
    std::vector<IndividualRecord> records;
    std::unordered_map<std::string, Cluster> meta;
    for (const auto& [id, members] : strata) {
        const auto an = alloc.find(id);
        if (an == alloc.end() || an->second == 0) {
            continue;
        }
        Rng rng(substream_seed(seed, id));
        std::vector<double> sizes;
        for (std::size_t i : members) {
            sizes.push_back(population.eas[i].households);
        }
        std::vector<double> pi;
        const auto chosen = systematic_pps(sizes, an->second, rng, &pi);
        for (std::size_t k = 0; k < chosen.size(); ++k) {
            const auto& ea = population.eas[members[chosen[k]]];
            const int m = std::min(design.households_per_cluster, ea.households);
            const double weight = 1.0 / (pi[k] * static_cast<double>(m) / ea.households);
            Cluster c;
            c.id = "c_" + ea.id;
            c.location = ea.location;
            c.admin1_id = ea.admin1_id;
            c.admin2_id = ea.admin2_id;
            c.recorded_admin1_id = ea.admin1_id;
            c.stratum_id = id;
            c.urbanicity = ea.urbanicity;
            meta.emplace(c.id, c);
            for (int h = 0; h < m; ++h) {
                IndividualRecord r;
                r.outcome = uniform01(rng) < ea.prevalence ? 1 : 0;
                r.weight = weight;
                r.cluster_id = c.id;
                r.stratum_id = id;
                r.urbanicity = ea.urbanicity;
                if (with_cov) {
                    r.covariates.push_back(ea.covariate);
                }
                records.push_back(std::move(r));
            }
        }
    }
    return build_dataset(std::move(records), meta, population.covariate_names());
}

std::vector<AreaMetrics> evaluate(const std::vector<std::vector<IntervalEstimate>>& replicates,
                                  const std::map<std::string, double>& truth) {
    if (replicates.size() < 2) {
        throw DataError("evaluation needs at least 2 replicates");
    }
    auto ids_of = [](const std::vector<IntervalEstimate>& r) {
        std::set<std::string> s;
        for (const auto& e : r) {
            s.insert(e.area_id);
        }
        return s;
    };
    const auto ids = ids_of(replicates.front());
    for (const auto& r : replicates) {
        if (ids_of(r) != ids || r.size() != ids.size()) {
            throw DataError("replicates cover different area sets");
        }
    }
    std::map<std::string, AreaMetrics> acc;
    std::map<std::string, std::pair<int, int>> intervals;  // defined, covering
    for (const auto& id : ids) {
        auto t = truth.find(id);
        if (t == truth.end()) {
            throw DataError("no true value for area " + id);
        }
        AreaMetrics& a = acc[id];
        a.area_id = id;
        a.truth = t->second;
        a.bias = a.mse = a.mean_width = 0.0;
    }
    for (const auto& r : replicates) {
        for (const auto& e : r) {
            if (std::isnan(e.estimate)) {
                continue;
            }
            AreaMetrics& a = acc[e.area_id];
            const double err = e.estimate - a.truth;
            a.bias += err;
            a.mse += err * err;
            ++a.n_replicates;
            if (!std::isnan(e.lower) && !std::isnan(e.upper)) {
                auto& iv = intervals[e.area_id];
                ++iv.first;
                iv.second += (e.lower <= a.truth && a.truth <= e.upper) ? 1 : 0;
                a.mean_width += e.upper - e.lower;
            }
        }
    }
    std::vector<AreaMetrics> out;
    for (auto& [id, a] : acc) {
        if (a.n_replicates == 0) {
            a.bias = a.mse = a.mean_width = kNaN;
        } else {
            a.bias /= a.n_replicates;
            a.mse /= a.n_replicates;
            const auto iv = intervals[id];
            if (iv.first > 0) {
                a.coverage = static_cast<double>(iv.second) / iv.first;
                a.mean_width /= iv.first;
            } else {
                a.mean_width = kNaN;
            }
        }
        out.push_back(a);
    }
    return out;
}

csv::Table metrics_table(const std::vector<AreaMetrics>& metrics, const std::string& model_tag) {
    csv::Table t({"model_tag", "area_id", "truth", "bias", "mse", "coverage", "mean_width",
                  "n_replicates"});
    for (const auto& m : metrics) {
        t.add_row({model_tag, m.area_id, csv::format_number(m.truth), csv::format_number(m.bias),
                   csv::format_number(m.mse), csv::format_number(m.coverage),
                   csv::format_number(m.mean_width), std::to_string(m.n_replicates)});
    }
    return t;
}

double mean_squared_error(const std::vector<IntervalEstimate>& estimates,
                          const std::map<std::string, double>& truth) {
    double acc = 0.0;
    int n = 0;
    for (const auto& e : estimates) {
        auto t = truth.find(e.area_id);
        if (t == truth.end() || std::isnan(e.estimate)) {
            continue;
        }
        acc += (e.estimate - t->second) * (e.estimate - t->second);
        ++n;
    }
    return n > 0 ? acc / n : kNaN;
}

}  // namespace prevmap::sim
