#pragma once

// Independent reference implementations used by the unit and acceptance tests.

#include "helpers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace oracle {

struct FlatRecord {
    std::string area;
    std::string stratum;
    std::string cluster;
    int y = 0;
    double w = 1.0;
};

struct HajekValue {
    double p = NAN;
    double var = NAN;
};

/// Ratio estimator and stratified with-replacement linearization, written from flat records.
inline HajekValue hajek(const std::vector<FlatRecord>& recs, const std::string& area) {
    double num = 0.0, den = 0.0;
    for (const auto& r : recs) {
        if (r.area == area) {
            num += r.w * r.y;
            den += r.w;
        }
    }
    HajekValue out;
    if (den == 0.0) {
        return out;
    }
    out.p = num / den;
    std::map<std::string, std::map<std::string, double>> u;  // stratum -> cluster -> score
    for (const auto& r : recs) {
        if (r.area == area) {
            u[r.stratum][r.cluster] += r.w * (r.y - out.p) / den;
        }
    }
    double v = 0.0;
    for (const auto& [h, clusters] : u) {
        const double n = static_cast<double>(clusters.size());
        if (n < 2) {
            continue;
        }
        double mean = 0.0;
        for (const auto& [c, s] : clusters) mean += s / n;
        for (const auto& [c, s] : clusters) v += n / (n - 1.0) * (s - mean) * (s - mean);
    }
    out.var = v;
    return out;
}

/// Random small survey: 1..3 areas, 1..3 strata, 1..4 clusters per stratum, 1..5 records.
inline std::vector<FlatRecord> random_survey(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> areas(1, 3), strata(1, 3), clusters(1, 4), members(1, 5), coin(0, 1);
    std::uniform_real_distribution<double> weight(0.1, 10.0);
    std::vector<FlatRecord> out;
    const int na = areas(rng);
    for (int a = 0; a < na; ++a) {
        const int ns = strata(rng);
        for (int h = 0; h < ns; ++h) {
            const int nc = clusters(rng);
            for (int c = 0; c < nc; ++c) {
                const double w = weight(rng);
                const int nm = members(rng);
                for (int m = 0; m < nm; ++m) {
                    const std::string area = "a" + std::to_string(a);
                    out.push_back({area, area + "_s" + std::to_string(h),
                                   area + "_s" + std::to_string(h) + "_c" + std::to_string(c), coin(rng),
                                   w * (1.0 + 0.1 * m)});
                }
            }
        }
    }
    return out;
}

inline prevmap::SurveyDataset to_dataset(const std::vector<FlatRecord>& recs) {
    std::vector<testing::ClusterSpec> specs;
    std::map<std::string, std::size_t> index;
    for (const auto& r : recs) {
        auto it = index.find(r.cluster);
        if (it == index.end()) {
            it = index.emplace(r.cluster, specs.size()).first;
            specs.push_back({r.cluster, r.stratum, r.area, r.area, prevmap::Urbanicity::urban, {}});
        }
        specs[it->second].records.emplace_back(r.y, r.w);
    }
    return testing::make_dataset(specs);
}

/// Beta-binomial pmf through Beta functions with a = p(1-d)/d, b = (1-p)(1-d)/d.
inline double betabinom_pmf(int y, int n, double p, double d) {
    const double a = p * (1 - d) / d, b = (1 - p) * (1 - d) / d;
    auto lbeta = [](double x, double z) { return std::lgamma(x) + std::lgamma(z) - std::lgamma(x + z); };
    const double lc = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
    return std::exp(lc + lbeta(y + a, n - y + b) - lbeta(a, b));
}

inline double binom_pmf(int y, int n, double p) {
    const double lc = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
    return std::exp(lc + y * std::log(p) + (n - y) * std::log1p(-p));
}

/// Moore-Penrose inverse of a graph Laplacian through its eigendecomposition.
inline Eigen::MatrixXd laplacian_pinv(const Eigen::MatrixXd& lap) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
    Eigen::VectorXd inv = es.eigenvalues();
    for (Eigen::Index i = 0; i < inv.size(); ++i) {
        inv[i] = std::abs(inv[i]) > 1e-9 ? 1.0 / inv[i] : 0.0;
    }
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline Eigen::MatrixXd dense_laplacian(int n, const std::vector<std::pair<int, int>>& edges) {
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    for (auto [a, b] : edges) {
        if (a == b || l(a, b) != 0.0) continue;
        l(a, b) = l(b, a) = -1.0;
        l(a, a) += 1.0;
        l(b, b) += 1.0;
    }
    return l;
}

/// log N(y; 0, S) via a dense Cholesky.
inline double gaussian_logdensity(const Eigen::VectorXd& y, const Eigen::MatrixXd& s) {
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    const Eigen::VectorXd z = llt.matrixL().solve(y);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    return -0.5 * (y.size() * prevmap::kLog2Pi + logdet + z.squaredNorm());
}

/// Conjugate Gaussian posterior of x ~ N(0, P) given y = A x + e, e ~ N(0, diag(v)).
struct GaussianPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};
inline GaussianPosterior conjugate(const Eigen::MatrixXd& prior_cov, const Eigen::MatrixXd& a,
                                   const Eigen::VectorXd& v, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd s = a * prior_cov * a.transpose() + Eigen::MatrixXd(v.asDiagonal());
    const Eigen::MatrixXd gain = prior_cov * a.transpose() * s.inverse();
    return {gain * y, prior_cov - gain * a * prior_cov};
}

}  // namespace oracle
