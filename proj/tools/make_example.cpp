// Writes the bundled synthetic example: survey, geography, pixels, urban fractions, config.
#include "prevmap/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace prevmap;
    namespace fs = std::filesystem;

    CLI::App app{"Generate the synthetic example inputs"};
    std::string out = "data/synthetic";
    std::uint64_t seed = 20221;
    app.add_option("--out", out, "Output directory");
    app.add_option("--seed", seed, "Generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const Geography geo = sim::grid_geography(8, 5);
        sim::PopulationParams params;
        params.covariate = true;
        params.beta = 0.3;
        const auto pop = sim::gen_population(params, geo, substream_seed(seed, "population"));
        sim::DesignSpec design;
        design.clusters_per_admin1 = 40;
        design.urban_oversampling = 2.0;
        const SurveyDataset ds = sim::draw_sample(pop, design, substream_seed(seed, "sample"));

        // Drop the area columns so the pipeline has to assign clusters from coordinates.
        const csv::Table full = survey_table(ds);
        std::vector<std::string> keep;
        for (const auto& h : full.header()) {
            if (h != "admin1" && h != "admin2") {
                keep.push_back(h);
            }
        }
        csv::Table survey(keep);
        for (const auto& row : full.rows()) {
            std::vector<std::string> r;
            for (std::size_t k = 0; k < full.header().size(); ++k) {
                if (full.header()[k] != "admin1" && full.header()[k] != "admin2") {
                    r.push_back(row[k]);
                }
            }
            survey.add_row(std::move(r));
        }

        csv::Table fractions({"admin1_id", "urban_fraction"});
        for (const auto& [id, f] : pop.reported_urban_fractions()) {
            fractions.add_row({id, csv::format_number(f)});
        }
        csv::Table truth({"area_id", "level", "prevalence"});
        for (const auto& [id, p] : pop.admin1_truth) {
            truth.add_row({id, "admin1", csv::format_number(p)});
        }
        for (const auto& [id, p] : pop.admin2_truth) {
            truth.add_row({id, "admin2", csv::format_number(p)});
        }
        truth.add_row({"national", "national", csv::format_number(pop.national_truth)});

        const fs::path dir = out;
        fs::create_directories(dir);
        csv::write_file(dir / "survey.csv", survey);
        csv::write_text_atomic(dir / "geography.geojson", geography_to_geojson(geo));
        csv::write_file(dir / "pixels.csv", pop.pixels().table());
        csv::write_file(dir / "urban_fractions.csv", fractions);
        csv::write_file(dir / "truth.csv", truth);
        std::cout << "wrote example inputs to " << dir.string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 0;
}
