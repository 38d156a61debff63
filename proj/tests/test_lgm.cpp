#include "oracles.hpp"

#include <doctest.h>

using namespace prevmap;
using namespace prevmap::lgm;

namespace {

/// alpha + u_iid latent pair; rows pick (alpha + u) or alpha alone.
LatentModelSpec toy_spec(const std::vector<bool>& with_u, double alpha_precision) {
    LatentModelSpec spec;
    spec.likelihood = Likelihood::beta_binomial;
    spec.fixed.push_back({"alpha", 1, alpha_precision});
    spec.iid_size = 1;
    std::vector<Eigen::Triplet<double>> t;
    for (std::size_t k = 0; k < with_u.size(); ++k) {
        t.emplace_back(static_cast<int>(k), 0, 1.0);
        if (with_u[k]) t.emplace_back(static_cast<int>(k), 1, 1.0);
    }
    spec.design.resize(static_cast<Eigen::Index>(with_u.size()), 2);
    spec.design.setFromTriplets(t.begin(), t.end());
    spec.offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(with_u.size()));
    return spec;
}

GridSpec fixed_grid(double d, double iid_sigma) {
    GridSpec g;
    g.overdispersion = fixed_axis("d", d);
    g.iid_sigma = fixed_axis("iid_sigma", iid_sigma);
    return g;
}

Eigen::VectorXd eta_of(const LatentModelSpec& spec, const Eigen::VectorXd& x) {
    return spec.design * x + spec.offset;
}

/// Newton iteration on binomial log-likelihood plus the Gaussian prior.
Eigen::VectorXd binomial_mode(const LatentModelSpec& spec, const BinomialData& data, const Eigen::MatrixXd& prior_q) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(spec.dim());
    const Eigen::MatrixXd a = Eigen::MatrixXd(spec.design);
    for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd eta = eta_of(spec, x);
        Eigen::VectorXd g = -prior_q * x;
        Eigen::MatrixXd h = prior_q;
        for (Eigen::Index k = 0; k < eta.size(); ++k) {
            const double p = expit(eta[k]);
            g += a.row(k).transpose() * (data.successes[k] - data.trials[k] * p);
            h += a.row(k).transpose() * a.row(k) * (data.trials[k] * p * (1 - p));
        }
        const Eigen::VectorXd step = h.ldlt().solve(g);
        x += step;
        if (step.norm() < 1e-14) break;
    }
    return x;
}

}  // namespace

TEST_CASE("beta-binomial pmf") {
    for (double d : {1e-6, 0.1, 0.5, 0.9}) {
        CHECK(std::exp(betabinom_logpmf(1, 1, 0.3, d)) == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(std::exp(betabinom_logpmf(0, 1, 0.3, d)) == doctest::Approx(0.7).epsilon(1e-12));
    }
    CHECK(std::abs(std::exp(betabinom_logpmf(0, 2, 0.5, 0.5)) - 3.0 / 8.0) < 1e-12);
    CHECK(std::abs(std::exp(betabinom_logpmf(1, 2, 0.5, 0.5)) - 1.0 / 4.0) < 1e-12);
    CHECK(std::abs(std::exp(betabinom_logpmf(1, 2, 0.5, 1e-12)) - 0.5) < 1e-6);
    CHECK(std::exp(betabinom_logpmf(0, 0, 0.5, 0.2)) == doctest::Approx(1.0));
    CHECK_THROWS_AS(betabinom_logpmf(3, 2, 0.5, 0.1), ParameterError);
    CHECK_THROWS_AS(betabinom_logpmf(1, 2, 1.0, 0.1), ParameterError);
    CHECK_THROWS_AS(betabinom_logpmf(1, 2, 0.5, 1.0), ParameterError);
}

TEST_CASE("property: beta-binomial matches the Beta-function oracle and its moments") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> up(0.02, 0.98), ud(0.01, 0.9);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 1 + static_cast<int>(rng() % 10);
        const double p = up(rng), d = ud(rng);
        double total = 0.0, mean = 0.0, second = 0.0;
        for (int y = 0; y <= n; ++y) {
            const double f = std::exp(betabinom_logpmf(y, n, p, d));
            CHECK(f == doctest::Approx(oracle::betabinom_pmf(y, n, p, d)).epsilon(1e-9));
            total += f;
            mean += y * f;
            second += y * y * f;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
        CHECK(std::abs(mean - n * p) < 1e-10);
        CHECK(std::abs(second - mean * mean - n * p * (1 - p) * (1 + (n - 1) * d)) < 1e-10);
    }
}

TEST_CASE("eta-term derivatives agree with finite differences") {
    for (double d : {0.0, 1e-3, 0.3}) {
        for (double eta : {-2.0, 0.1, 1.7}) {
            const auto t = betabinom_eta_term(3, 7, eta, d);
            const double h = 1e-5;
            const auto tp = betabinom_eta_term(3, 7, eta + h, d);
            const auto tm = betabinom_eta_term(3, 7, eta - h, d);
            CHECK(t.gradient == doctest::Approx((tp.value - tm.value) / (2 * h)).epsilon(1e-6));
            CHECK(t.hessian == doctest::Approx((tp.gradient - tm.gradient) / (2 * h)).epsilon(1e-5));
        }
    }
}

TEST_CASE("Gaussian LGM reproduces the conjugate one-area posterior") {
    LatentModelSpec spec;
    spec.likelihood = Likelihood::gaussian_known_variance;
    spec.iid_size = 1;
    spec.design.resize(1, 1);
    spec.design.insert(0, 0) = 1.0;
    spec.offset = Eigen::VectorXd::Zero(1);
    GridSpec g;
    g.iid_sigma = fixed_axis("iid_sigma", 1.0);
    const LgmFit fit = fit_gaussian_lgm(spec, {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 1.0)}, g);
    const ConditionalGaussian c = fit.conditional(0);
    CHECK(std::abs(c.mean[0] - 0.5) < 1e-12);
    CHECK(std::abs(c.constrained_covariance()(0, 0) - 0.5) < 1e-12);
    CHECK(std::abs(fit.grid.points[0].log_mlik -
                   oracle::gaussian_logdensity(Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Constant(1, 1, 2.0))) < 1e-12);

    const PosteriorSamples a = sample_posterior(fit, 1000, 9);
    const PosteriorSamples b = sample_posterior(fit, 1000, 9);
    CHECK(a.latent == b.latent);
    const PosteriorSamples big = sample_posterior(fit, 100000, 10);
    const double mean = big.latent.row(0).mean();
    CHECK(std::abs(mean - 0.5) < 3.0 * std::sqrt(0.5 / 100000));
    CHECK_THROWS_AS(sample_posterior(fit, 0, 1), ParameterError);
}

TEST_CASE("Gaussian LGM: independent areas factorize and uninformative data revert to the prior") {
    LatentModelSpec spec;
    spec.likelihood = Likelihood::gaussian_known_variance;
    spec.iid_size = 2;
    spec.design.resize(2, 2);
    spec.design.insert(0, 0) = 1.0;
    spec.design.insert(1, 1) = 1.0;
    spec.offset = Eigen::VectorXd::Zero(2);
    GridSpec g;
    g.iid_sigma = fixed_axis("iid_sigma", 0.8);
    Eigen::VectorXd y(2), v(2);
    y << 1.0, -0.5;
    v << 0.3, 1e12;
    const LgmFit fit = fit_gaussian_lgm(spec, {y, v}, g);
    const ConditionalGaussian c = fit.conditional(0);
    const Eigen::MatrixXd cov = c.constrained_covariance();
    CHECK(std::abs(cov(0, 1)) < 1e-12);
    CHECK(std::abs(c.mean[1]) < 1e-9);
    CHECK(cov(1, 1) == doctest::Approx(0.64).epsilon(1e-9));
}

TEST_CASE("Gaussian BYM2 marginal likelihood matches the dense oracle") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd;
    for (int n : {3, 6, 12}) {
        std::vector<std::pair<int, int>> edges;
        for (int i = 1; i < n; ++i) edges.emplace_back(i - 1, i);
        auto icar = std::make_shared<ScaledIcar>(scale_icar(graph_from_edges(n, edges)));
        LatentModelSpec spec;
        spec.likelihood = Likelihood::gaussian_known_variance;
        const double prec = 0.5;
        spec.fixed.push_back({"alpha", 1, prec});
        spec.bym2 = icar;
        std::vector<Eigen::Triplet<double>> t;
        for (int k = 0; k < n; ++k) {
            t.emplace_back(k, 0, 1.0);
            t.emplace_back(k, 1 + k, 1.0);
        }
        spec.design.resize(n, spec.dim());
        spec.design.setFromTriplets(t.begin(), t.end());
        spec.offset = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd y(n), v(n);
        for (int k = 0; k < n; ++k) {
            y[k] = nd(rng);
            v[k] = 0.1 + 0.05 * k;
        }
        const double sigma = 0.9, phi = 0.6;
        const PointEvaluation ev = evaluate_point(spec, GaussianData{y, v}, Hyper{sigma, phi, kNaN, kNaN});
        REQUIRE(ev.ok);
        const Eigen::MatrixXd s = Eigen::MatrixXd::Constant(n, n, 1.0 / prec) + bym2_covariance(*icar, sigma, phi) +
                                  Eigen::MatrixXd(v.asDiagonal());
        CHECK(std::abs(ev.log_mlik - oracle::gaussian_logdensity(y, s)) < 1e-8);
    }
}

TEST_CASE("Laplace mode at vanishing overdispersion matches a binomial Newton oracle") {
    const LatentModelSpec spec = toy_spec({true, true, false}, 0.1);
    const BinomialData data{{12, 5, 8}, {20, 20, 20}};
    const LgmFit fit = fit_laplace_lgm(spec, data, fixed_grid(1e-10, 0.7));
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(2, 2);
    q(0, 0) = 0.1;
    q(1, 1) = 1.0 / 0.49;
    const Eigen::VectorXd mode = binomial_mode(spec, data, q);
    CHECK((fit.conditional(0).mean - mode).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("Laplace handles complete separation through the prior") {
    const LatentModelSpec spec = toy_spec({false}, 0.1);
    LatentModelSpec s1 = spec;
    s1.iid_size = 0;
    s1.design.resize(1, 1);
    s1.design.insert(0, 0) = 1.0;
    GridSpec g;
    g.overdispersion = fixed_axis("d", 0.01);
    const LgmFit fit = fit_laplace_lgm(s1, {{15}, {15}}, g);
    const double m = fit.conditional(0).mean[0];
    CHECK(std::isfinite(m));
    CHECK(m > 2.0);
}
