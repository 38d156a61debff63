#pragma once

#include "prevmap/pipeline.hpp"

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace testing {

using namespace prevmap;

struct ClusterSpec {
    std::string id;
    std::string stratum;
    std::string admin1;
    std::string admin2;
    Urbanicity urbanicity = Urbanicity::urban;
    std::vector<std::pair<int, double>> records;  // (outcome, weight)
};

inline SurveyDataset make_dataset(const std::vector<ClusterSpec>& specs) {
    std::vector<IndividualRecord> records;
    std::unordered_map<std::string, Cluster> meta;
    for (const auto& s : specs) {
        Cluster c;
        c.id = s.id;
        c.admin1_id = s.admin1;
        c.admin2_id = s.admin2;
        c.recorded_admin1_id = s.admin1;
        c.stratum_id = s.stratum;
        c.urbanicity = s.urbanicity;
        meta[s.id] = c;
        for (const auto& [y, w] : s.records) {
            IndividualRecord r;
            r.outcome = y;
            r.weight = w;
            r.cluster_id = s.id;
            r.stratum_id = s.stratum;
            r.urbanicity = s.urbanicity;
            records.push_back(r);
        }
    }
    return build_dataset(std::move(records), meta, {});
}

inline geometry::Ring square(double x0, double y0, double x1, double y1) {
    return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("prevmap_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Small path-graph area structure with ids a0..a{n-1}.
inline AreaStructure path_structure(int n, Level level = Level::admin1) {
    std::vector<std::pair<int, int>> edges;
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
        ids.push_back("a" + std::to_string(i));
        if (i > 0) {
            edges.emplace_back(i - 1, i);
        }
    }
    AreaStructure s;
    s.level = level;
    s.icar = std::make_shared<ScaledIcar>(scale_icar(graph_from_edges(n, edges, ids)));
    s.admin1_ids = {"A"};
    s.parent.assign(static_cast<std::size_t>(n), 0);
    if (level == Level::admin1) {
        s.admin1_ids = ids;
        for (int i = 0; i < n; ++i) {
            s.parent[static_cast<std::size_t>(i)] = i;
        }
    }
    return s;
}

}  // namespace testing
