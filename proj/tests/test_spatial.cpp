#include "oracles.hpp"

#include <doctest.h>

using namespace prevmap;
using testing::square;

namespace {

Geography strip(std::vector<geometry::Ring> rings) {
    std::vector<Area> a1{{"P", Level::admin1, "", {square(0, 0, 10, 10)}}};
    std::vector<Area> a2;
    for (std::size_t i = 0; i < rings.size(); ++i) {
        std::vector<geometry::Ring> r;
        if (!rings[i].empty()) r.push_back(rings[i]);
        a2.push_back({std::string(1, static_cast<char>('A' + i)), Level::admin2, "P", r});
    }
    return Geography(a1, a2);
}

double geometric_mean(const Eigen::VectorXd& v) {
    double s = 0.0;
    for (double x : v) s += std::log(x);
    return std::exp(s / static_cast<double>(v.size()));
}

}  // namespace

TEST_CASE("adjacency from shared edges") {
    const auto g = build_adjacency(strip({square(0, 0, 1, 1), square(1, 0, 2, 1), square(2, 0, 3, 1)}),
                                   Level::admin2);
    CHECK(g.neighbors[0] == std::vector<int>{1});
    CHECK(g.neighbors[1] == std::vector<int>{0, 2});
    CHECK(g.neighbors[2] == std::vector<int>{1});
    CHECK(g.components.size() == 1);

    const auto d = build_adjacency(strip({square(0, 0, 1, 1), square(3, 0, 4, 1)}), Level::admin2);
    CHECK(d.neighbors[0].empty());
    CHECK(d.components.size() == 2);
}

TEST_CASE("empty polygon becomes an isolated node with a warning") {
    Warnings w;
    const auto g = build_adjacency(strip({square(0, 0, 1, 1), {}}), Level::admin2, &w);
    CHECK(g.neighbors[1].empty());
    CHECK_FALSE(w.empty());
}

TEST_CASE("scaled ICAR on small graphs") {
    SUBCASE("path of three") {
        const ScaledIcar s = scale_icar(graph_from_edges(3, {{0, 1}, {1, 2}}));
        CHECK(s.raw_marginal_variances[0] == doctest::Approx(5.0 / 9.0).epsilon(1e-12));
        CHECK(s.raw_marginal_variances[1] == doctest::Approx(2.0 / 9.0).epsilon(1e-12));
        CHECK(s.raw_marginal_variances[2] == doctest::Approx(5.0 / 9.0).epsilon(1e-12));
        REQUIRE(s.scaling.size() == 1);
        CHECK(std::abs(s.scaling[0] - std::cbrt(50.0 / 729.0)) < 1e-10);
    }
    SUBCASE("complete graph on two nodes") {
        const ScaledIcar s = scale_icar(graph_from_edges(2, {{0, 1}}));
        CHECK(s.raw_marginal_variances[0] == doctest::Approx(0.25));
        CHECK(s.scaling[0] == doctest::Approx(0.25));
    }
    SUBCASE("singletons carry no spatial effect") {
        const ScaledIcar s = scale_icar(graph_from_edges(3, {{0, 1}}));
        CHECK(s.n_spatial == 2);
        CHECK(s.spatial_index[2] == -1);
        CHECK(s.rank_deficiency() == 1);
    }
}

TEST_CASE("property: scaled fields have geometric-mean variance one per component") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = std::uniform_int_distribution<int>(2, 30)(rng);
        std::vector<std::pair<int, int>> edges;
        for (int i = 1; i < n; ++i) {
            edges.emplace_back(std::uniform_int_distribution<int>(0, i - 1)(rng), i);
        }
        if (n > 3) edges.emplace_back(0, n - 1);
        const ScaledIcar s = scale_icar(graph_from_edges(n, edges));
        const Eigen::VectorXd var = s.covariance.diagonal();
        CHECK(std::abs(geometric_mean(var) - 1.0) < 1e-10);
        // Generalized inverse oracle for the raw variances.
        const Eigen::MatrixXd pinv = oracle::laplacian_pinv(oracle::dense_laplacian(n, edges));
        for (int i = 0; i < n; ++i) {
            CHECK(s.raw_marginal_variances[i] == doctest::Approx(pinv(i, i)).epsilon(1e-9));
        }
    }
}

TEST_CASE("BYM2 covariance and precision are inverse") {
    const ScaledIcar s = scale_icar(graph_from_edges(4, {{0, 1}, {1, 2}, {2, 3}}));
    const Eigen::MatrixXd c = bym2_covariance(s, 0.7, 0.4);
    const Eigen::MatrixXd q = bym2_precision(s, 0.7, 0.4);
    CHECK((c * q - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
    const Eigen::VectorXd d = bym2_covariance(s, 1.0, 0.0).diagonal();
    CHECK((d.array() - 1.0).abs().maxCoeff() < 1e-14);
}

TEST_CASE("PC prior on sigma") {
    const PcPriorSigma p(1.0, 0.01);
    CHECK(p.rate() == doctest::Approx(-std::log(0.01)).epsilon(1e-14));
    CHECK(std::abs(p.tail_probability(1.0) - 0.01) < 1e-12);
    CHECK(PcPriorSigma(1.0, std::exp(-1.0)).rate() == doctest::Approx(1.0).epsilon(1e-14));
    // Density integrates to one (substitution sigma = t / (1 - t) on a fine midpoint grid).
    double total = 0.0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
        const double t = (k + 0.5) / n;
        const double sigma = t / (1 - t);
        total += std::exp(p.log_density(sigma)) / ((1 - t) * (1 - t)) / n;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
    CHECK_THROWS_AS(PcPriorSigma(-1.0, 0.01), ParameterError);
    CHECK_THROWS_AS(PcPriorSigma(1.0, 1.5), ParameterError);
}

TEST_CASE("PC prior on phi") {
    const ScaledIcar s = scale_icar(graph_from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 2}}));
    const PcPriorPhi p(s, 0.5, 2.0 / 3.0, 2001);
    std::vector<double> dens, tail_x, tail_f;
    for (std::size_t k = 0; k < p.grid().size(); ++k) {
        const double f = std::exp(p.log_density_table()[k]);
        CHECK(f >= 0.0);
        dens.push_back(f);
        if (p.grid()[k] >= 0.5) {
            tail_x.push_back(p.grid()[k]);
            tail_f.push_back(f);
        }
    }
    CHECK(std::abs(trapezoid(p.grid(), dens) - 1.0) < 1e-4);
    CHECK(std::abs(trapezoid(tail_x, tail_f) - 2.0 / 3.0) < 1e-4);
    CHECK(std::abs(p.tail_probability(0.5) - 2.0 / 3.0) < 1e-9);
}
