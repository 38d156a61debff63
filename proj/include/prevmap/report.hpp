#pragma once

#include "prevmap/csv.hpp"
#include "prevmap/data_model.hpp"

#include <map>
#include <string>
#include <vector>

namespace prevmap::report {

/// Fixed 9-class sequential scale (ColorBrewer YlGnBu) over [lo, hi]; values outside are
/// clamped to the end classes and NaN maps to the no-data grey.
struct ColorScale {
    double lo = 0.0;
    double hi = 1.0;

    static const std::vector<std::string>& palette();
    static constexpr const char* kNoData = "#cccccc";
    std::string color(double value) const;
};

/// Point estimates with 95% intervals, areas sorted by posterior mean.
/// Reads an estimates table (area_id, mean, lower95, upper95).
std::string interval_plot(const csv::Table& estimates, const std::string& title);

/// One <polygon> per area ring, filled by the scale; legend drawn with <rect> swatches.
std::string choropleth(const Geography& geography, Level level,
                       const std::map<std::string, double>& values, const ColorScale& scale,
                       const std::string& title);

/// Model mean against direct p_hat. Areas without a usable direct estimate are drawn as
/// triangles (class "sentinel") on the lower axis.
std::string scatter(const csv::Table& direct, const csv::Table& estimates, const std::string& title);

/// One density trace per area, ordered by the estimates-table median (lowest at the bottom).
std::string ridge(const csv::Table& draws, const csv::Table& estimates, const std::string& title);

/// Point estimates of several models per area, one colour per model.
std::string overlay(const std::vector<csv::Table>& estimates, const std::string& title);

/// Column of `table` keyed by area_id, filtered on an optional (column, value) pair.
std::map<std::string, double> column_by_area(const csv::Table& table, const std::string& column,
                                             const std::string& filter_column = {},
                                             const std::string& filter_value = {});

}  // namespace prevmap::report
