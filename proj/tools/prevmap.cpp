#include "prevmap/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace prevmap;

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> models;
    std::string level;
};

RunConfig load_config(const Options& o) {
    RunConfig c = RunConfig::load(o.config);
    if (!o.out.empty()) {
        c.output_dir = o.out;
    }
    if (o.seed) {
        c.seed = *o.seed;
        c.source["seed"] = *o.seed;
    }
    return c;
}

std::optional<Level> level_of(const Options& o) {
    if (o.level.empty()) {
        return std::nullopt;
    }
    return parse_level(o.level);
}

int run_stages(const Options& o, const std::vector<std::string>& stages) {
    const RunConfig c = load_config(o);
    const RunResult r = run_pipeline(c, stages, o.models, level_of(o));
    for (const auto& s : r.stages) {
        std::cout << s.name << ": " << s.status;
        if (!s.message.empty()) {
            std::cout << " (" << s.message << ")";
        }
        std::cout << "\n";
        if (s.status == "failed") {
            std::cerr << "error in stage '" << s.name << "': " << s.message << "\n";
        }
    }
    return r.exit_code;
}

int run_simulate(const Options& o) {
    if (!std::filesystem::exists(o.config)) {
        throw ConfigError("scenario file not found: " + o.config);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(csv::read_text(o.config));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scenario is not valid JSON: " + std::string(e.what()));
    }
    if (o.seed) {
        j["seed"] = *o.seed;
    }
    Scenario s = Scenario::parse(j);
    const auto level = level_of(o);
    std::vector<ModelRequest> kept;
    for (const auto& m : s.models) {
        const bool tag_ok = o.models.empty() || std::find(o.models.begin(), o.models.end(), m.tag) != o.models.end();
        if (tag_ok && (!level || m.level == *level)) {
            kept.push_back(m);
        }
    }
    s.models = kept;
    const std::filesystem::path out = o.out.empty() ? std::filesystem::path("simulation_output") : std::filesystem::path(o.out);
    std::filesystem::create_directories(out);
    const ScenarioResult r = run_scenario(s);
    write_scenario_outputs(r, out);
    std::cout << "wrote " << (out / "metrics.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Small-area prevalence estimation from household-survey data"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub, const char* config_help) {
        sub->add_option("--config", o.config, config_help)->required();
        sub->add_option("--out", o.out, "Output directory (overrides the config)");
        sub->add_option("--seed", o.seed, "Root seed (overrides the config)");
        sub->add_option("--models", o.models, "Comma-separated model tags")->delimiter(',');
        sub->add_option("--level", o.level, "Restrict to models at this level")
            ->check(CLI::IsMember({"admin1", "admin2"}));
    };

    std::map<std::string, CLI::App*> subs;
    for (const auto& name : stage_names()) {
        subs[name] = app.add_subcommand(name, "Run the '" + name + "' stage");
        add_common(subs[name], "Run configuration (JSON)");
    }
    auto* run = app.add_subcommand("run", "Run the full pipeline");
    add_common(run, "Run configuration (JSON)");
    auto* simulate = app.add_subcommand("simulate", "Run a design-based simulation scenario");
    add_common(simulate, "Scenario configuration (JSON)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) {
            return run_stages(o, {});
        }
        if (simulate->parsed()) {
            return run_simulate(o);
        }
        for (const auto& [name, sub] : subs) {
            if (sub->parsed()) {
                return run_stages(o, {name});
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 2;
}
