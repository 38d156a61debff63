#pragma once

#include "prevmap/common.hpp"
#include "prevmap/csv.hpp"
#include "prevmap/spatial.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace prevmap::lgm {

// ---------------------------------------------------------------------------
// Beta-binomial likelihood

/// log P(Y = y) for Y ~ BetaBinomial(n, mean p, overdispersion d), with
/// a = p(1-d)/d, b = (1-p)(1-d)/d. Evaluated through the rising-factorial product
/// B(y+a, n-y+b)/B(a,b) = prod(p + k r) prod(1-p + k r) / prod(1 + k r), r = d/(1-d),
/// which is exact and continuous at the binomial limit d = 0.
template <typename Scalar>
Scalar betabinom_logpmf(int y, int n, Scalar p, Scalar d) {
    using std::lgamma;
    using std::log;
    if (n < 0 || y < 0 || y > n) {
        throw ParameterError("betabinom_logpmf: need 0 <= y <= n");
    }
    if (!(p > Scalar(0) && p < Scalar(1))) {
        throw ParameterError("betabinom_logpmf: p must lie in (0, 1)");
    }
    if (!(d >= Scalar(0) && d < Scalar(1))) {
        throw ParameterError("betabinom_logpmf: d must lie in [0, 1)");
    }
    const Scalar r = d / (Scalar(1) - d);
    Scalar acc = Scalar(lgamma(n + 1.0) - lgamma(y + 1.0) - lgamma(n - y + 1.0));
    for (int k = 0; k < y; ++k) {
        acc += log(p + Scalar(k) * r);
    }
    for (int k = 0; k < n - y; ++k) {
        acc += log(Scalar(1) - p + Scalar(k) * r);
    }
    for (int k = 1; k < n; ++k) {
        acc -= log(Scalar(1) + Scalar(k) * r);
    }
    return acc;
}

/// Log-likelihood of one cluster and its first two derivatives in the logit predictor.
struct PointwiseTerm {
    double value = 0.0;
    double gradient = 0.0;
    double hessian = 0.0;
};
PointwiseTerm betabinom_eta_term(int y, int n, double eta, double d);
PointwiseTerm gaussian_term(double observed, double variance, double eta);

// ---------------------------------------------------------------------------
// Model specification

enum class Likelihood { gaussian_known_variance, beta_binomial };

struct FixedEffectBlock {
    std::string name;
    int size = 1;
    double prior_precision = 1e-3;
};

struct Hyper {
    double sigma = kNaN;           // BYM2 total standard deviation
    double phi = kNaN;             // BYM2 spatial proportion
    double overdispersion = kNaN;  // beta-binomial d
    double iid_sigma = kNaN;       // standard deviation of the IID block
};

/// Latent vector layout: [fixed blocks..., b (BYM2 total effect, one per graph node),
/// s (scaled ICAR, one per non-singleton node), iid block].
struct LatentModelSpec {
    Likelihood likelihood = Likelihood::gaussian_known_variance;
    std::vector<FixedEffectBlock> fixed;
    std::shared_ptr<const ScaledIcar> bym2;
    int iid_size = 0;
    /// Observation design (n_obs x dim): eta = design * x + offset.
    Eigen::SparseMatrix<double, Eigen::RowMajor> design;
    Eigen::VectorXd offset;
    /// Spatial components up to this size always get a dense constraint-direction
    /// regulariser (exact after conditioning, improves conditioning).
    int dense_constraint_max = 256;

    int fixed_dim() const;
    int fixed_offset(std::size_t block) const;
    int n_nodes() const { return bym2 ? bym2->graph.size() : 0; }
    int n_spatial() const { return bym2 ? bym2->n_spatial : 0; }
    int bym2_offset() const { return fixed_dim(); }
    int spatial_offset() const { return fixed_dim() + n_nodes(); }
    int iid_offset() const { return spatial_offset() + n_spatial(); }
    int dim() const { return iid_offset() + iid_size; }
    int n_constraints() const { return bym2 ? bym2->rank_deficiency() : 0; }
    int n_obs() const { return static_cast<int>(design.rows()); }

    /// Throws ParameterError on inconsistent dimensions.
    void check() const;
    /// Prior precision at the given hyperparameters (without any regulariser).
    Eigen::SparseMatrix<double> prior_precision(const Hyper& h) const;
    /// Log prior density on the constraint plane, evaluated at x (assumed constrained).
    double log_prior(const Eigen::VectorXd& x, const Hyper& h) const;
};

struct GaussianData {
    Eigen::VectorXd value;
    Eigen::VectorXd variance;
};

struct BinomialData {
    std::vector<int> successes;
    std::vector<int> trials;
};

using ObservationData = std::variant<GaussianData, BinomialData>;

// ---------------------------------------------------------------------------
// Hyperparameter grid

struct Axis {
    std::string name;
    std::vector<double> values;
    std::vector<double> log_weight;  // log prior density x quadrature cell weight
};

/// 0.1%-99.9% prior quantiles, log-spaced.
Axis sigma_axis(const PcPriorSigma& prior, int points = 25, std::string name = "sigma");
/// Midpoints of `points` equal cells on (0, 1).
Axis phi_axis(const PcPriorPhi& prior, int points = 21);
/// Log-spaced on [lo, hi]; prior logit(d) ~ N(0, 1/0.4).
Axis overdispersion_axis(int points = 15, double lo = 1e-4, double hi = 0.5);
Axis fixed_axis(std::string name, double value);

struct GridSpec {
    std::optional<Axis> sigma;
    std::optional<Axis> phi;
    std::optional<Axis> overdispersion;
    std::optional<Axis> iid_sigma;
    /// Points whose log posterior falls this far below the running maximum stop the
    /// neighbourhood search. Infinite means exhaustive evaluation.
    double prune_log_drop = kInf;
};

struct GridPoint {
    std::array<int, 4> index{};  // per axis (sigma, phi, d, iid), -1 when absent
    Hyper hyper;
    double log_prior = 0.0;
    double log_mlik = kNaN;
    double weight = 0.0;
    bool ok = false;
    int iterations = 0;
    Eigen::VectorXd mode;
};

struct HyperGrid {
    std::vector<Axis> axes;          // present axes in order sigma, phi, d, iid
    std::vector<GridPoint> points;   // evaluated points, sorted by linear index
    std::size_t full_size = 0;       // number of points on the full grid
    std::vector<std::string> warnings;

    /// Audit export: axis values, log prior, log mlik, weight.
    csv::Table table() const;
};

/// Convergence controls for the mode search.
struct NewtonOptions {
    double gradient_tolerance = 1e-8;
    int max_iterations = 100;
    int max_halvings = 40;
};

struct PointEvaluation {
    bool ok = false;
    double log_mlik = kNaN;
    Eigen::VectorXd mode;
    int iterations = 0;
    double max_gradient = kNaN;  // constrained gradient at the returned point
    std::string message;
};

/// Mode search and (Laplace or exact Gaussian) log marginal likelihood at one hyperparameter.
PointEvaluation evaluate_point(const LatentModelSpec& spec, const ObservationData& data,
                               const Hyper& h, const Eigen::VectorXd* start = nullptr,
                               const NewtonOptions& opts = {});

/// Gaussian (approximation) of the latent field at one grid point, before constraints.
struct ConditionalGaussian {
    Eigen::VectorXd mean;
    Eigen::SparseMatrix<double> precision;
    /// Constraint rows (K x dim); the conditional law is N(mean, precision^-1 | C x = 0).
    Eigen::MatrixXd constraints;
    /// Dense covariance after conditioning on the constraints (for small models and tests).
    Eigen::MatrixXd constrained_covariance() const;
};

struct LgmFit {
    LatentModelSpec spec;
    ObservationData data;
    HyperGrid grid;

    ConditionalGaussian conditional(std::size_t point) const;
    /// Index of the highest-weight grid point.
    std::size_t map_point() const;
};

/// Exact conditional-Gaussian fit for Gaussian observations with known variances.
LgmFit fit_gaussian_lgm(LatentModelSpec spec, GaussianData observations, const GridSpec& grid,
                        const NewtonOptions& opts = {});
/// Laplace-approximation fit for beta-binomial cluster counts.
LgmFit fit_laplace_lgm(LatentModelSpec spec, BinomialData observations, const GridSpec& grid,
                       const NewtonOptions& opts = {});

struct PosteriorSamples {
    Eigen::MatrixXd latent;  // dim x n_draws
    std::vector<Hyper> hyper;
    std::vector<int> grid_point;  // index into HyperGrid::points
    std::uint64_t seed = 0;

    int n_draws() const { return static_cast<int>(latent.cols()); }
    /// n_draws x (dim + 4) matrix: latent then (sigma, phi, d, iid_sigma).
    Eigen::MatrixXd matrix() const;
};

PosteriorSamples sample_posterior(const LgmFit& fit, int n_draws, std::uint64_t seed);

}  // namespace prevmap::lgm
