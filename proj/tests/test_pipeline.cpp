#include "helpers.hpp"

#include "prevmap/pipeline.hpp"

#include <doctest.h>

#include <fstream>
#include <regex>

using namespace prevmap;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kExample = fs::path(PREVMAP_SOURCE_DIR) / "data" / "synthetic";

json small_config() {
    json j = json::parse(csv::read_text(kExample / "config.json"));
    j["models"] = json::array({
        {{"tag", "fh_admin1"}, {"type", "fh"}, {"level", "admin1"}},
        {{"tag", "strat"}, {"type", "cluster"}, {"level", "admin2"}, {"variant", "stratified_nested"}},
    });
    j["grid"] = {{"sigma_points", 5}, {"phi_points", 3}, {"d_points", 3}};
    j["n_draws"] = 200;
    return j;
}

/// Copies the example inputs to a scratch directory, optionally rewriting the survey.
fs::path stage_inputs(const std::string& name, bool all_urban = false) {
    const fs::path dir = testing::scratch_dir(name);
    for (const char* f : {"geography.geojson", "pixels.csv", "urban_fractions.csv"}) {
        fs::copy_file(kExample / f, dir / f);
    }
    std::string survey = csv::read_text(kExample / "survey.csv");
    if (all_urban) {
        survey = std::regex_replace(survey, std::regex("rural"), "urban");
    }
    std::ofstream(dir / "survey.csv") << survey;
    return dir;
}

std::map<std::string, std::string> artifact_hashes(const fs::path& out) {
    const json m = json::parse(csv::read_text(out / "manifest.json"));
    std::map<std::string, std::string> h;
    for (const auto& [stage, v] : m.at("stages").items()) {
        for (const auto& [rel, hash] : v.at("artifacts").items()) h[rel] = hash.get<std::string>();
    }
    return h;
}

}  // namespace

TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("config validation") {
    const json base = small_config();
    CHECK_NOTHROW(RunConfig::parse(base, kExample));

    json j = base;
    j["unexpected"] = 1;
    CHECK_THROWS_AS(RunConfig::parse(j, kExample), ConfigError);
    j = base;
    j["grid"]["bogus"] = 1;
    CHECK_THROWS_AS(RunConfig::parse(j, kExample), ConfigError);
    j = base;
    j.erase("seed");
    CHECK_THROWS_AS(RunConfig::parse(j, kExample), ConfigError);
    j = base;
    j["n_draws"] = 10;
    CHECK_THROWS_AS(RunConfig::parse(j, kExample), ConfigError);
    j = base;
    j["models"].push_back(j["models"][0]);
    CHECK_THROWS_AS(RunConfig::parse(j, kExample), ConfigError);
    j = base;
    j["models"][1]["level"] = "admin1";
    CHECK_THROWS_AS(RunConfig::parse(j, kExample), ConfigError);

    try {
        j = base;
        j["unexpected"] = 1;
        RunConfig::parse(j, kExample);
    } catch (const std::exception& e) {
        CHECK(exit_code_for(e) == 2);
    }
    CHECK(exit_code_for(DataError("x")) == 3);
    CHECK(exit_code_for(std::runtime_error("x")) == 4);
}

TEST_CASE("stage failure keeps earlier artifacts and skips later stages") {
    const fs::path dir = stage_inputs("urban_only", true);
    RunConfig cfg = RunConfig::parse(small_config(), dir);
    const RunResult r = run_pipeline(cfg);
    CHECK(r.exit_code == 3);
    std::map<std::string, std::string> status;
    for (const auto& s : r.stages) status[s.name] = s.status;
    CHECK(status["validate"] == "ok");
    CHECK(status["direct"] == "ok");
    CHECK(status["fit"] == "failed");
    CHECK(status["aggregate"] == "skipped");
    CHECK(status["report"] == "skipped");
    CHECK(fs::exists(cfg.output_dir / "direct" / "direct_admin2.csv"));
    const json m = json::parse(csv::read_text(cfg.output_dir / "manifest.json"));
    CHECK(m["stages"]["fit"]["status"] == "failed");
}

TEST_CASE("stages restart from artifacts and reruns are deterministic") {
    const fs::path dir = stage_inputs("restart");
    const RunConfig cfg = RunConfig::parse(small_config(), dir);
    const RunResult first = run_pipeline(cfg);
    REQUIRE(first.exit_code == 0);
    const auto hashes = artifact_hashes(cfg.output_dir);
    CHECK(hashes.count("fit/strat/predictor_draws.csv") == 1);
    CHECK(hashes.count("diagnostics/summary.json") == 1);

    fs::remove_all(cfg.output_dir / "aggregate");
    fs::remove_all(cfg.output_dir / "diagnostics");
    SUBCASE("missing upstream artifact is a data error") {
        CHECK(run_pipeline(cfg, {"diagnose"}).exit_code == 3);
    }
    SUBCASE("rerunning the removed stages reproduces them") {
        REQUIRE(run_pipeline(cfg, {"aggregate", "diagnose"}).exit_code == 0);
        const auto again = artifact_hashes(cfg.output_dir);
        CHECK(again == hashes);
        for (const auto& [rel, h] : hashes) {
            CHECK(sha256_hex(csv::read_text(cfg.output_dir / rel)) == h);
        }
    }
    SUBCASE("model filter limits the fit stage") {
        fs::remove_all(cfg.output_dir / "fit");
        REQUIRE(run_pipeline(cfg, {"fit"}, {"fh_admin1"}).exit_code == 0);
        CHECK(fs::exists(cfg.output_dir / "fit" / "fh_admin1" / "estimates.csv"));
        CHECK_FALSE(fs::exists(cfg.output_dir / "fit" / "strat"));
    }
}
