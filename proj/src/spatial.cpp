#include "prevmap/spatial.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace prevmap {

AdjacencyGraph graph_from_edges(int n, const std::vector<std::pair<int, int>>& edges,
                                std::vector<std::string> ids) {
    AdjacencyGraph g;
    if (ids.empty()) {
        for (int i = 0; i < n; ++i) {
            ids.push_back(std::to_string(i));
        }
    }
    if (static_cast<int>(ids.size()) != n) {
        throw ParameterError("graph_from_edges: id count does not match node count");
    }
    g.ids = std::move(ids);
    std::vector<std::set<int>> nb(n);
    for (auto [a, b] : edges) {
        if (a < 0 || b < 0 || a >= n || b >= n) {
            throw ParameterError("graph_from_edges: node index out of range");
        }
        if (a == b) {
            continue;
        }
        nb[a].insert(b);
        nb[b].insert(a);
    }
    g.neighbors.resize(n);
    for (int i = 0; i < n; ++i) {
        g.neighbors[i].assign(nb[i].begin(), nb[i].end());
    }
    g.component.assign(n, -1);
    for (int start = 0; start < n; ++start) {
        if (g.component[start] >= 0) {
            continue;
        }
        const int k = static_cast<int>(g.components.size());
        std::vector<int> members;
        std::vector<int> stack = {start};
        g.component[start] = k;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            members.push_back(v);
            for (int w : g.neighbors[v]) {
                if (g.component[w] < 0) {
                    g.component[w] = k;
                    stack.push_back(w);
                }
            }
        }
        std::sort(members.begin(), members.end());
        g.components.push_back(std::move(members));
    }
    return g;
}

namespace {

struct Vertex {
    double x;
    double y;
    int area;
};

std::vector<std::pair<int, int>> shared_vertex_edges(const std::vector<Area>& areas) {
    constexpr double tol = 1e-9;
    std::vector<Vertex> verts;
    for (int a = 0; a < static_cast<int>(areas.size()); ++a) {
        for (const auto& ring : areas[a].rings) {
            for (const auto& p : ring) {
                verts.push_back({p.x, p.y, a});
            }
        }
    }
    std::sort(verts.begin(), verts.end(), [](const Vertex& l, const Vertex& r) {
        return l.x < r.x || (l.x == r.x && (l.y < r.y || (l.y == r.y && l.area < r.area)));
    });
    std::set<std::pair<int, int>> edges;
    for (std::size_t i = 0; i < verts.size(); ++i) {
        for (std::size_t j = i + 1; j < verts.size() && verts[j].x - verts[i].x <= tol; ++j) {
            if (verts[j].area != verts[i].area && std::abs(verts[j].y - verts[i].y) <= tol) {
                edges.insert(std::minmax(verts[i].area, verts[j].area));
            }
        }
    }
    return {edges.begin(), edges.end()};
}

}  // namespace

AdjacencyGraph build_adjacency(const Geography& geography, Level level, Warnings* warnings) {
    const auto& areas = geography.areas(level);
    const int n = static_cast<int>(areas.size());
    std::vector<std::pair<int, int>> edges;
    const bool has_polygons =
        std::any_of(areas.begin(), areas.end(), [](const Area& a) { return !a.rings.empty(); });
    if (level == Level::admin1 && !has_polygons) {
        const auto& children = geography.areas(Level::admin2);
        const auto& parent = geography.parent_index();
        for (auto [a, b] : shared_vertex_edges(children)) {
            const int pa = static_cast<int>(parent[a]);
            const int pb = static_cast<int>(parent[b]);
            if (pa != pb) {
                edges.emplace_back(pa, pb);
            }
        }
    } else {
        edges = shared_vertex_edges(areas);
    }
    if (warnings) {
        for (const auto& a : areas) {
            if (a.rings.empty() && has_polygons) {
                warnings->add("area " + a.id + " has no polygon; treated as isolated");
            }
        }
    }
    return graph_from_edges(n, edges, geography.ids(level));
}

std::string adjacency_text(const AdjacencyGraph& graph) {
    std::ostringstream os;
    for (int i = 0; i < graph.size(); ++i) {
        os << graph.ids[i] << ":";
        for (int j : graph.neighbors[i]) {
            os << ' ' << graph.ids[j];
        }
        os << '\n';
    }
    return os.str();
}

Eigen::SparseMatrix<double> laplacian(const AdjacencyGraph& graph) {
    const int n = graph.size();
    std::vector<Eigen::Triplet<double>> trips;
    for (int i = 0; i < n; ++i) {
        trips.emplace_back(i, i, static_cast<double>(graph.neighbors[i].size()));
        for (int j : graph.neighbors[i]) {
            trips.emplace_back(i, j, -1.0);
        }
    }
    Eigen::SparseMatrix<double> r(n, n);
    r.setFromTriplets(trips.begin(), trips.end());
    return r;
}

ScaledIcar scale_icar(const AdjacencyGraph& graph) {
    ScaledIcar out;
    out.graph = graph;
    const int n = graph.size();
    out.spatial_index.assign(n, -1);
    out.raw_marginal_variances = Eigen::VectorXd::Constant(n, kNaN);
    for (const auto& comp : graph.components) {
        if (comp.size() < 2) {
            continue;
        }
        std::vector<int> idx;
        for (int v : comp) {
            out.spatial_index[v] = out.n_spatial;
            idx.push_back(out.n_spatial++);
        }
        out.spatial_components.push_back(std::move(idx));
    }

    std::vector<Eigen::Triplet<double>> trips;
    std::vector<double> eigs;
    out.covariance = Eigen::MatrixXd::Zero(out.n_spatial, out.n_spatial);
    for (const auto& comp : graph.components) {
        const int nk = static_cast<int>(comp.size());
        if (nk < 2) {
            continue;
        }
        Eigen::MatrixXd rk = Eigen::MatrixXd::Zero(nk, nk);
        for (int a = 0; a < nk; ++a) {
            const int v = comp[a];
            rk(a, a) = static_cast<double>(graph.neighbors[v].size());
            for (int w : graph.neighbors[v]) {
                const auto it = std::lower_bound(comp.begin(), comp.end(), w);
                rk(a, static_cast<int>(it - comp.begin())) = -1.0;
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rk);
        const Eigen::VectorXd& lam = es.eigenvalues();  // ascending; lam(0) is the null direction
        const Eigen::MatrixXd& vec = es.eigenvectors();
        Eigen::MatrixXd ginv = Eigen::MatrixXd::Zero(nk, nk);
        for (int m = 1; m < nk; ++m) {
            ginv.noalias() += vec.col(m) * vec.col(m).transpose() / lam(m);
        }
        double log_gm = 0.0;
        for (int a = 0; a < nk; ++a) {
            out.raw_marginal_variances(comp[a]) = ginv(a, a);
            log_gm += std::log(ginv(a, a));
        }
        const double ck = std::exp(log_gm / nk);
        out.scaling.push_back(ck);
        for (int m = 1; m < nk; ++m) {
            eigs.push_back(ck * lam(m));
            out.log_pseudo_determinant += std::log(ck * lam(m));
        }
        for (int a = 0; a < nk; ++a) {
            const int ia = out.spatial_index[comp[a]];
            for (int b = 0; b < nk; ++b) {
                const int ib = out.spatial_index[comp[b]];
                out.covariance(ia, ib) = ginv(a, b) / ck;
                if (rk(a, b) != 0.0) {
                    trips.emplace_back(ia, ib, ck * rk(a, b));
                }
            }
        }
    }
    out.structure.resize(out.n_spatial, out.n_spatial);
    out.structure.setFromTriplets(trips.begin(), trips.end());
    out.eigenvalues = Eigen::Map<Eigen::VectorXd>(eigs.data(), static_cast<Eigen::Index>(eigs.size()));
    return out;
}

Eigen::MatrixXd bym2_covariance(const ScaledIcar& icar, double sigma, double phi) {
    const int n = icar.graph.size();
    Eigen::MatrixXd cov = (1.0 - phi) * Eigen::MatrixXd::Identity(n, n);
    if (phi != 0.0) {
        for (int i = 0; i < n; ++i) {
            const int si = icar.spatial_index[i];
            if (si < 0) {
                continue;
            }
            for (int j = 0; j < n; ++j) {
                const int sj = icar.spatial_index[j];
                if (sj >= 0) {
                    cov(i, j) += phi * icar.covariance(si, sj);
                }
            }
        }
    }
    return sigma * sigma * cov;
}

Eigen::MatrixXd bym2_precision(const ScaledIcar& icar, double sigma, double phi) {
    if (!(phi < 1.0)) {
        throw ParameterError("bym2_precision requires phi < 1");
    }
    const Eigen::MatrixXd cov = bym2_covariance(icar, sigma, phi);
    const int n = static_cast<int>(cov.rows());
    return cov.ldlt().solve(Eigen::MatrixXd::Identity(n, n));
}

// ---------------------------------------------------------------------------

PcPriorSigma::PcPriorSigma(double u, double alpha) : u_(u), alpha_(alpha) {
    if (!(u > 0.0) || !(alpha > 0.0 && alpha < 1.0)) {
        throw ParameterError("PC prior for sigma needs u > 0 and 0 < alpha < 1");
    }
    rate_ = -std::log(alpha) / u;
}

double PcPriorSigma::log_density(double sigma) const {
    if (sigma < 0.0) {
        return -kInf;
    }
    return std::log(rate_) - rate_ * sigma;
}

double PcPriorSigma::tail_probability(double sigma) const {
    return sigma <= 0.0 ? 1.0 : std::exp(-rate_ * sigma);
}

double PcPriorSigma::quantile(double q) const {
    if (!(q >= 0.0 && q < 1.0)) {
        throw ParameterError("quantile level must lie in [0, 1)");
    }
    return -std::log1p(-q) / rate_;
}

namespace {

// P(X > d) for X ~ rate * exp(-rate x) truncated to [0, d_max]; any sign of rate.
double truncated_tail(double rate, double d, double d_max) {
    if (rate == 0.0) {
        return (d_max - d) / d_max;
    }
    if (rate < 0.0) {
        return std::expm1(rate * (d_max - d)) / std::expm1(rate * d_max);
    }
    return std::expm1(-rate * (d_max - d)) * std::exp(-rate * d) / std::expm1(-rate * d_max);
}

}  // namespace

PcPriorPhi::PcPriorPhi(const ScaledIcar& icar, double u, double alpha, int grid_points) {
    if (!(u > 0.0 && u < 1.0) || !(alpha > 0.0 && alpha < 1.0)) {
        throw ParameterError("PC prior for phi needs u and alpha in (0, 1)");
    }
    if (grid_points < 3) {
        throw ParameterError("PC prior for phi needs at least 3 grid points");
    }
    for (Eigen::Index m = 0; m < icar.eigenvalues.size(); ++m) {
        gamma_minus_one_.push_back(1.0 / icar.eigenvalues(m) - 1.0);
    }
    d_max_ = distance(1.0);
    const double d_u = distance(u);
    if (!(d_max_ > 0.0)) {
        throw ParameterError("PC prior for phi: spatial structure identical to base model");
    }
    // P(phi > u) as a function of the rate: decreasing from 1 (rate -> -inf) to 0.
    auto tail = [&](double rate) { return truncated_tail(rate, d_u, d_max_); };
    const double bound = 700.0 / d_max_;
    if (!(tail(bound) < alpha && tail(-bound) > alpha)) {
        throw ParameterError("PC prior for phi: tail condition P(phi > " + std::to_string(u) +
                             ") = " + std::to_string(alpha) + " is unsolvable");
    }
    double lo = -bound, hi = bound;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (tail(mid) > alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    rate_ = 0.5 * (lo + hi);
    // log of |rate| / |1 - exp(-rate d_max)|, the truncated-exponential normaliser.
    double log_scale = 0.0;
    if (rate_ > 0.0) {
        log_scale = std::log(rate_) - std::log(-std::expm1(-rate_ * d_max_));
    } else if (rate_ < 0.0) {
        log_scale = std::log(-rate_) - std::log(std::expm1(-rate_ * d_max_));
    } else {
        log_scale = -std::log(d_max_);
    }

    grid_.resize(grid_points);
    log_density_.resize(grid_points);
    for (int j = 0; j < grid_points; ++j) {
        const double phi = static_cast<double>(j) / (grid_points - 1);
        grid_[j] = phi;
        log_density_[j] = log_scale - rate_ * distance(phi) + std::log(distance_derivative(phi));
    }
}

double PcPriorPhi::kld(double phi) const {
    double a = 0.0, logdet = 0.0;
    for (double g : gamma_minus_one_) {
        a += g;
        logdet += std::log1p(phi * g);
    }
    return 0.5 * (phi * a - logdet);
}

double PcPriorPhi::kld_derivative(double phi) const {
    double acc = 0.0;
    for (double g : gamma_minus_one_) {
        acc += g - g / (1.0 + phi * g);
    }
    return 0.5 * acc;
}

double PcPriorPhi::distance(double phi) const {
    return std::sqrt(std::max(0.0, 2.0 * kld(phi)));
}

double PcPriorPhi::distance_derivative(double phi) const {
    if (phi < 1e-8) {
        double s = 0.0;
        for (double g : gamma_minus_one_) {
            s += g * g;
        }
        return std::sqrt(0.5 * s);
    }
    return kld_derivative(phi) / distance(phi);
}

double PcPriorPhi::log_density(double phi) const {
    if (phi <= 0.0) {
        return log_density_.front();
    }
    if (phi >= 1.0) {
        return log_density_.back();
    }
    const double pos = phi * static_cast<double>(grid_.size() - 1);
    const auto j = static_cast<std::size_t>(pos);
    if (j + 1 >= grid_.size()) {
        return log_density_.back();
    }
    const double t = pos - static_cast<double>(j);
    return (1.0 - t) * log_density_[j] + t * log_density_[j + 1];
}

double PcPriorPhi::tail_probability(double phi) const {
    return truncated_tail(rate_, distance(std::clamp(phi, 0.0, 1.0)), d_max_);
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& f) {
    double acc = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        acc += 0.5 * (x[i] - x[i - 1]) * (f[i] + f[i - 1]);
    }
    return acc;
}

}  // namespace prevmap
