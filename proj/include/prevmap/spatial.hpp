#pragma once

#include "prevmap/data_model.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <string>
#include <utility>
#include <vector>

namespace prevmap {

struct AdjacencyGraph {
    std::vector<std::string> ids;
    std::vector<std::vector<int>> neighbors;  // sorted, symmetric, no self-loops
    std::vector<int> component;               // component index per node
    std::vector<std::vector<int>> components;  // node lists, ordered by smallest member

    int size() const { return static_cast<int>(neighbors.size()); }
};

/// Builds the graph from an undirected edge list; duplicate edges are merged.
AdjacencyGraph graph_from_edges(int n, const std::vector<std::pair<int, int>>& edges,
                                std::vector<std::string> ids = {});

/// Queen contiguity: areas are adjacent when their boundaries share a vertex (within 1e-9).
/// Admin1 areas without polygons inherit adjacency from their admin2 children.
AdjacencyGraph build_adjacency(const Geography& geography, Level level,
                               Warnings* warnings = nullptr);

/// "id: neighbor ids" per line.
std::string adjacency_text(const AdjacencyGraph& graph);

/// Graph Laplacian (unscaled ICAR structure).
Eigen::SparseMatrix<double> laplacian(const AdjacencyGraph& graph);

/// Scaled ICAR structure on the non-singleton nodes of a graph.
///
/// Each connected component k of size > 1 is scaled by c_k, the geometric mean of the
/// marginal variances of the sum-to-zero constrained field, so the scaled field has
/// geometric-mean marginal variance 1. Singleton nodes carry no spatial effect.
struct ScaledIcar {
    AdjacencyGraph graph;
    /// node -> row in the spatial block, -1 for singletons.
    std::vector<int> spatial_index;
    int n_spatial = 0;
    /// Non-singleton components as spatial-block indices.
    std::vector<std::vector<int>> spatial_components;
    std::vector<double> scaling;  // c_k per spatial component
    /// Scaled structure R* (n_spatial x n_spatial).
    Eigen::SparseMatrix<double> structure;
    /// Marginal variances of the unscaled constrained field, per graph node (NaN for singletons).
    Eigen::VectorXd raw_marginal_variances;
    /// Nonzero eigenvalues of R*, all components concatenated.
    Eigen::VectorXd eigenvalues;
    /// Sum of log nonzero eigenvalues of R*.
    double log_pseudo_determinant = 0.0;
    /// Dense generalized inverse of R* (constrained covariance of the scaled field).
    Eigen::MatrixXd covariance;

    int rank_deficiency() const { return static_cast<int>(spatial_components.size()); }
};

ScaledIcar scale_icar(const AdjacencyGraph& graph);

/// Marginal covariance of the BYM2 effect over all graph nodes,
/// sigma^2 ((1 - phi) I + phi S*), with S* zero on singleton rows.
Eigen::MatrixXd bym2_covariance(const ScaledIcar& icar, double sigma, double phi);
/// Inverse of bym2_covariance (requires phi < 1).
Eigen::MatrixXd bym2_precision(const ScaledIcar& icar, double sigma, double phi);

/// Penalised-complexity prior for a standard deviation: exponential with
/// rate -log(alpha)/u, so that P(sigma > u) = alpha.
class PcPriorSigma {
public:
    PcPriorSigma(double u, double alpha);
    double rate() const { return rate_; }
    double u() const { return u_; }
    double alpha() const { return alpha_; }
    double log_density(double sigma) const;
    double tail_probability(double sigma) const;
    double quantile(double q) const;

private:
    double u_;
    double alpha_;
    double rate_;
};

/// Penalised-complexity prior for the BYM2 mixing parameter, tabulated on an
/// equispaced grid over [0, 1].
///
/// The distance to the base model is d(phi) = sqrt(2 KLD(phi)) with
/// 2 KLD(phi) = phi * sum(g_m - 1) - sum log(1 + phi (g_m - 1)), where g_m are the
/// nonzero eigenvalues of the scaled generalized inverse. d is bounded on the
/// constrained subspace, so the exponential on d is truncated at d(1) and the rate is
/// solved numerically from P(phi > u) = alpha. The rate turns negative when alpha exceeds
/// the tail of a uniform law on [0, d(1)].
class PcPriorPhi {
public:
    PcPriorPhi(const ScaledIcar& icar, double u, double alpha, int grid_points = 201);

    double rate() const { return rate_; }
    const std::vector<double>& grid() const { return grid_; }
    const std::vector<double>& log_density_table() const { return log_density_; }
    /// Linear interpolation of the tabulated log density.
    double log_density(double phi) const;
    double distance(double phi) const;
    /// Closed-form tail probability of the truncated construction.
    double tail_probability(double phi) const;

private:
    double kld(double phi) const;
    double kld_derivative(double phi) const;
    double distance_derivative(double phi) const;

    std::vector<double> gamma_minus_one_;
    double rate_ = 0.0;
    double d_max_ = 0.0;
    std::vector<double> grid_;
    std::vector<double> log_density_;
};

/// Trapezoid rule over tabulated (x, f(x)).
double trapezoid(const std::vector<double>& x, const std::vector<double>& f);

}  // namespace prevmap
