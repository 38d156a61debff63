#include "oracles.hpp"

#include <doctest.h>

using namespace prevmap;
using testing::ClusterSpec;
using testing::make_dataset;
using testing::square;

TEST_CASE("hajek on the two-cluster example") {
    const SurveyDataset ds = make_dataset({{"A", "s", "x", "x", Urbanicity::urban, {{1, 2.0}}},
                                           {"B", "s", "x", "x", Urbanicity::urban, {{0, 1.0}}}});
    const auto est = hajek(ds, Level::admin1, {"x"});
    REQUIRE(est.size() == 1);
    CHECK(est[0].p_hat == 2.0 / 3.0);
    CHECK(est[0].var_hat == doctest::Approx(16.0 / 81.0).epsilon(1e-15));
    CHECK(est[0].flag == DirectFlag::ok);
}

TEST_CASE("hajek degenerate flags") {
    const SurveyDataset ds = make_dataset({{"A", "s", "x", "x", Urbanicity::urban, {{1, 2.0}, {1, 1.0}}},
                                           {"B", "s", "y", "y", Urbanicity::urban, {{1, 1.0}, {0, 1.0}}}});
    const auto est = hajek(ds, Level::admin1, {"x", "y", "z"});
    CHECK(est[0].p_hat == 1.0);
    CHECK(est[0].flag == DirectFlag::boundary_estimate);
    CHECK(est[1].flag == DirectFlag::zero_variance);
    CHECK(est[1].lonely_strata == 1);
    CHECK(est[2].flag == DirectFlag::no_data);
    CHECK(std::isnan(est[2].p_hat));
}

TEST_CASE("hajek matches the flat-record oracle on random surveys") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 100; ++rep) {
        const auto recs = oracle::random_survey(rng);
        const SurveyDataset ds = oracle::to_dataset(recs);
        const std::vector<std::string> ids{"a0", "a1", "a2"};
        const auto est = hajek(ds, Level::admin1, ids);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto o = oracle::hajek(recs, ids[i]);
            if (std::isnan(o.p)) {
                CHECK(est[i].flag == DirectFlag::no_data);
                continue;
            }
            CHECK(est[i].p_hat == doctest::Approx(o.p).epsilon(1e-12));
            if (est[i].flag == DirectFlag::ok || est[i].flag == DirectFlag::zero_variance) {
                CHECK(std::abs(est[i].var_hat - o.var) < 1e-12);
            }
        }
    }
}

TEST_CASE("property: hajek estimates lie in [0, 1] and are invariant to weight scaling") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        auto recs = oracle::random_survey(rng);
        const auto a = hajek(oracle::to_dataset(recs), Level::admin1, {"a0"});
        for (auto& r : recs) r.w *= 7.5;
        const auto b = hajek(oracle::to_dataset(recs), Level::admin1, {"a0"});
        CHECK(a[0].p_hat >= 0.0);
        CHECK(a[0].p_hat <= 1.0);
        CHECK(b[0].p_hat == doctest::Approx(a[0].p_hat).epsilon(1e-12));
        if (a[0].flag == DirectFlag::ok) {
            CHECK(b[0].var_hat == doctest::Approx(a[0].var_hat).epsilon(1e-10));
        }
    }
}

TEST_CASE("logit transform") {
    DirectEstimate e;
    e.area_id = "x";
    e.p_hat = 0.5;
    e.var_hat = 0.04;
    e.flag = DirectFlag::ok;
    auto t = logit_transform({e});
    REQUIRE(t.estimates.size() == 1);
    CHECK(t.estimates[0].theta_hat == 0.0);
    CHECK(t.estimates[0].v_hat == doctest::Approx(0.64).epsilon(1e-14));

    e.p_hat = expit(1.0);
    t = logit_transform({e});
    CHECK(t.estimates[0].theta_hat == doctest::Approx(1.0).epsilon(1e-15));

    e.p_hat = 0.5;
    e.var_hat = 0.0;
    e.flag = DirectFlag::zero_variance;
    t = logit_transform({e});
    CHECK(t.estimates.empty());
    REQUIRE(t.omitted.size() == 1);
    CHECK(t.omitted[0].reason == "zero_variance");
}

TEST_CASE("phantom augmentation") {
    std::vector<Area> a1{{"A", Level::admin1, "", {square(0, 0, 2, 1)}}};
    std::vector<Area> a2{{"A_1", Level::admin2, "A", {square(0, 0, 1, 1)}},
                         {"A_2", Level::admin2, "A", {square(1, 0, 2, 1)}},
                         {"A_3", Level::admin2, "A", {square(2, 0, 3, 1)}}};
    const Geography geo(a1, a2);
    // A_1 has a single cluster; A_2 two clusters with distinct outcomes; A_3 none.
    const SurveyDataset ds = make_dataset({{"c1", "s", "A", "A_1", Urbanicity::urban, {{1, 50.0}, {0, 50.0}}},
                                           {"c2", "s", "A", "A_2", Urbanicity::urban, {{1, 100.0}}},
                                           {"c3", "s", "A", "A_2", Urbanicity::urban, {{0, 60.0}, {1, 40.0}}}});
    DirectEstimate parent;
    parent.area_id = "A";
    parent.p_hat = 0.6;
    parent.var_hat = 0.01;
    parent.flag = DirectFlag::ok;
    const PhantomResult r = phantom_augment(ds, geo, {parent});
    REQUIRE(r.augmented_areas == std::vector<std::string>{"A_1"});
    REQUIRE(r.dataset.clusters.size() == 4);
    const Cluster& ph = r.dataset.clusters.back();
    CHECK(ph.phantom);
    CHECK(ph.admin2_id == "A_1");
    REQUIRE(ph.records.size() == 2);
    CHECK(ph.records[0].outcome == 1);
    CHECK(ph.records[0].weight == doctest::Approx(60.0));
    CHECK(ph.records[1].weight == doctest::Approx(40.0));
    // Unaffected areas keep their estimates.
    CHECK(hajek(r.dataset, Level::admin2, {"A_2"})[0].p_hat == hajek(ds, Level::admin2, {"A_2"})[0].p_hat);

    parent.flag = DirectFlag::boundary_estimate;
    CHECK_THROWS_AS(phantom_augment(ds, geo, {parent}), DataError);
}

TEST_CASE("direct table round trip") {
    const SurveyDataset ds = make_dataset({{"A", "s", "x", "x", Urbanicity::urban, {{1, 2.0}}},
                                           {"B", "s", "x", "x", Urbanicity::urban, {{0, 1.0}}}});
    const auto est = hajek(ds, Level::admin1, {"x", "y"});
    const auto back = parse_direct_table(csv::parse(csv::to_string(direct_table(est))));
    REQUIRE(back.size() == 2);
    CHECK(back[0].p_hat == est[0].p_hat);
    CHECK(back[0].var_hat == est[0].var_hat);
    CHECK(back[1].flag == DirectFlag::no_data);
    CHECK(est[0].ci_lower() < est[0].p_hat);
    CHECK(est[0].ci_upper() > est[0].p_hat);
}
