#include "oracles.hpp"

#include <doctest.h>

using namespace prevmap;

namespace {

AreaPosterior posterior(const Eigen::MatrixXd& draws) {
    AreaPosterior p;
    p.level = Level::admin2;
    p.model_tag = "m";
    for (Eigen::Index i = 0; i < draws.rows(); ++i) {
        p.area_ids.push_back("a" + std::to_string(i));
        p.flags.push_back("observed");
    }
    p.draws = draws;
    return p;
}

}  // namespace

TEST_CASE("cv flags") {
    SummaryStats s;
    s.mean = 0.5;
    s.sd = 0.1;
    s.cv = 0.2;
    CHECK_FALSE(cv_flag("a", s, 0.167).usable);
    CHECK(cv_flag("a", s, 1.0).usable);
    s.sd = 0.0;
    s.cv = 0.0;
    CHECK(cv_flag("a", s, 0.167).usable);
    s.mean = 0.0;
    s.cv = kNaN;
    CHECK_FALSE(cv_flag("a", s, 0.167).usable);
    const auto t = cv_table({cv_flag("a", s, 0.167)}, "m");
    CHECK(t.at(0, t.require("flag")) == "cv_undefined");
}

TEST_CASE("over-smoothing statistic") {
    Eigen::MatrixXd d(3, 2);
    d << 0.2, 0.5, 0.4, 0.5, 0.6, 0.5;
    const VStatistic v = oversmoothing_v(posterior(d));
    CHECK(v.draws[0] == doctest::Approx(0.04).epsilon(1e-14));
    CHECK(v.draws[1] == 0.0);
    CHECK_THROWS_AS(oversmoothing_v(posterior(Eigen::MatrixXd::Constant(1, 2, 0.5))), DataError);

    AreaPosterior coarse = posterior(Eigen::MatrixXd::Constant(1, 2, 0.4));
    coarse.area_ids = {"P"};
    const auto rep = replicate_to_children(coarse, {"a0", "a1", "a2"}, {{"a0", "P"}, {"a1", "P"}, {"a2", "P"}});
    CHECK(rep.draws.rows() == 3);
    const VComparison cmp = compare_v(posterior(d), rep);
    CHECK_FALSE(cmp.oversmoothing_likely);
}

TEST_CASE("exceedance probabilities") {
    Eigen::MatrixXd d(1, 3);
    d << 0.6, 0.8, 0.9;
    const auto p = posterior(d);
    CHECK(exceedance(p, 0.7)[0] == doctest::Approx(2.0 / 3.0));
    CHECK(exceedance(p, 0.0)[0] == 1.0);
    CHECK(exceedance(p, 1.0)[0] == 0.0);
}

TEST_CASE("WAIC") {
    const WaicResult one = waic(Eigen::MatrixXd::Constant(1, 2, -1.0));
    CHECK(one.lppd == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(one.p_waic == 0.0);
    CHECK(one.waic == doctest::Approx(2.0).epsilon(1e-14));
    Eigen::MatrixXd ll(3, 4);
    ll.setConstant(-0.3);
    CHECK(waic(ll).waic == doctest::Approx(-2.0 * 3 * -0.3));
    CHECK_THROWS(waic(Eigen::MatrixXd::Constant(2, 1, -1.0)));
    // Hand evaluation on a non-degenerate row.
    Eigen::MatrixXd r(1, 2);
    r << -1.0, -2.0;
    const WaicResult w = waic(r);
    const double lppd = std::log(0.5 * (std::exp(-1.0) + std::exp(-2.0)));
    CHECK(w.lppd == doctest::Approx(lppd).epsilon(1e-14));
    CHECK(w.p_waic == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("consistency checks") {
    CHECK(consistency_row("a", 0.4, 0.0, 0.4, 0.0).z == 0.0);
    const ConsistencyRow shifted = consistency_row("a", 0.5, 0.006, 0.4, 0.008);
    CHECK(std::abs(shifted.z) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(shifted.systematic);

    Eigen::MatrixXd d(1, 4);
    d << 0.3, 0.3, 0.3, 0.3;
    DirectEstimate ref;
    ref.area_id = "N";
    ref.p_hat = 0.3;
    ref.var_hat = 1e-4;
    ref.flag = DirectFlag::ok;
    const auto rows = consistency_check(posterior(d), {ref}, {{"a0", "N"}}, {{"a0", 5}});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].model_mean == doctest::Approx(0.3));
    CHECK(rows[0].z == doctest::Approx(0.0));
    CHECK_THROWS_AS(consistency_check(posterior(d), {ref}, {{"a0", "N"}}, {}), DataError);
}
