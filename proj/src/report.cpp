#include "prevmap/report.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace prevmap::report {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

class Svg {
public:
    Svg(double w, double h) : w_(w), h_(h) {}

    void raw(const std::string& s) { body_ << s << '\n'; }
    void text(double x, double y, const std::string& t, const std::string& extra = {}) {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" "
              << "font-size=\"11\"" << (extra.empty() ? "" : " " + extra) << ">" << escape(t)
              << "</text>\n";
    }
    void line(double x0, double y0, double x1, double y1, const std::string& stroke,
              double width = 1.0) {
        body_ << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1)
              << "\" y2=\"" << num(y1) << "\" stroke=\"" << stroke << "\" stroke-width=\""
              << num(width) << "\"/>\n";
    }
    void circle(double x, double y, double r, const std::string& fill, const std::string& cls = {}) {
        body_ << "<circle" << (cls.empty() ? "" : " class=\"" + cls + "\"") << " cx=\"" << num(x)
              << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\" fill=\"" << fill << "\"/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& stroke = "none") {
        body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
              << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke
              << "\"/>\n";
    }
    std::string str() const {
        std::ostringstream o;
        o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\""
          << num(h_) << "\" viewBox=\"0 0 " << num(w_) << " " << num(h_) << "\">\n"
          << "<rect x=\"0\" y=\"0\" width=\"" << num(w_) << "\" height=\"" << num(h_)
          << "\" fill=\"#ffffff\"/>\n"
          << body_.str() << "</svg>\n";
        return o.str();
    }

private:
    double w_, h_;
    std::ostringstream body_;
};

struct Row {
    std::string id;
    double mean = kNaN, lower = kNaN, upper = kNaN, median = kNaN;
};

std::vector<Row> estimate_rows(const csv::Table& t) {
    const auto c_id = t.require("area_id");
    const auto c_mean = t.require("mean");
    const auto c_lo = t.find("lower95");
    const auto c_hi = t.find("upper95");
    const auto c_med = t.find("median");
    std::vector<Row> rows;
    for (std::size_t r = 0; r < t.size(); ++r) {
        Row row;
        row.id = t.at(r, c_id);
        row.mean = csv::parse_number(t.at(r, c_mean));
        if (c_lo) row.lower = csv::parse_number(t.at(r, *c_lo));
        if (c_hi) row.upper = csv::parse_number(t.at(r, *c_hi));
        if (c_med) row.median = csv::parse_number(t.at(r, *c_med));
        rows.push_back(row);
    }
    return rows;
}

void axis_ticks(Svg& svg, double x0, double x1, double y, double lo, double hi, bool vertical,
                double y0 = 0.0, double y1 = 0.0) {
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        if (!vertical) {
            const double x = x0 + (x1 - x0) * k / 4.0;
            svg.line(x, y, x, y + 4, "#333333");
            svg.text(x - 8, y + 16, label(v));
        } else {
            const double yy = y1 - (y1 - y0) * k / 4.0;
            svg.line(x0 - 4, yy, x0, yy, "#333333");
            svg.text(x0 - 34, yy + 4, label(v));
        }
    }
}

}  // namespace

const std::vector<std::string>& ColorScale::palette() {
    static const std::vector<std::string> p{"#ffffd9", "#edf8b1", "#c7e9b4", "#7fcdbb", "#41b6c4",
                                            "#1d91c0", "#225ea8", "#253494", "#081d58"};
    return p;
}

std::string ColorScale::color(double value) const {
    if (std::isnan(value)) {
        return kNoData;
    }
    const auto& p = palette();
    const double t = (value - lo) / (hi - lo);
    const int k = std::clamp(static_cast<int>(std::floor(t * static_cast<double>(p.size()))), 0,
                             static_cast<int>(p.size()) - 1);
    return p[static_cast<std::size_t>(k)];
}

std::map<std::string, double> column_by_area(const csv::Table& table, const std::string& column,
                                             const std::string& filter_column,
                                             const std::string& filter_value) {
    const auto c_id = table.require("area_id");
    const auto c_v = table.require(column);
    std::optional<std::size_t> c_f;
    if (!filter_column.empty()) {
        c_f = table.require(filter_column);
    }
    std::map<std::string, double> out;
    for (std::size_t r = 0; r < table.size(); ++r) {
        if (c_f && table.at(r, *c_f) != filter_value) {
            continue;
        }
        out[table.at(r, c_id)] = csv::parse_number(table.at(r, c_v));
    }
    return out;
}

std::string interval_plot(const csv::Table& estimates, const std::string& title) {
    auto rows = estimate_rows(estimates);
    rows.erase(std::remove_if(rows.begin(), rows.end(), [](const Row& r) { return std::isnan(r.mean); }),
               rows.end());
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.mean < b.mean; });
    const double left = 90, top = 30, row_h = 14, plot_w = 420;
    const double height = top + row_h * static_cast<double>(rows.size()) + 40;
    Svg svg(left + plot_w + 30, height);
    svg.text(left, 18, title, "font-size=\"13\"");
    const double bottom = top + row_h * static_cast<double>(rows.size());
    auto x = [&](double v) { return left + plot_w * std::clamp(v, 0.0, 1.0); };
    svg.line(left, bottom, left + plot_w, bottom, "#333333");
    axis_ticks(svg, left, left + plot_w, bottom, 0.0, 1.0, false);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const double y = top + row_h * (static_cast<double>(i) + 0.5);
        svg.text(4, y + 4, r.id);
        if (!std::isnan(r.lower) && !std::isnan(r.upper)) {
            svg.line(x(r.lower), y, x(r.upper), y, "#225ea8", 1.5);
        }
        svg.circle(x(r.mean), y, 3, "#081d58");
    }
    return svg.str();
}

std::string choropleth(const Geography& geography, Level level,
                       const std::map<std::string, double>& values, const ColorScale& scale,
                       const std::string& title) {
    const auto& areas = geography.areas(level);
    double x0 = kInf, y0 = kInf, x1 = -kInf, y1 = -kInf;
    for (const auto& a : areas) {
        for (const auto& ring : a.rings) {
            for (const auto& p : ring) {
                x0 = std::min(x0, p.x);
                y0 = std::min(y0, p.y);
                x1 = std::max(x1, p.x);
                y1 = std::max(y1, p.y);
            }
        }
    }
    if (!(x1 > x0) || !(y1 > y0)) {
        x0 = y0 = 0.0;
        x1 = y1 = 1.0;
    }
    const double map_w = 480, top = 30;
    const double s = map_w / std::max(x1 - x0, y1 - y0);
    const double map_h = s * (y1 - y0);
    Svg svg(map_w + 150, std::max(map_h + top + 20, 260.0));
    svg.text(10, 18, title, "font-size=\"13\"");
    for (const auto& a : areas) {
        auto it = values.find(a.id);
        const std::string fill = scale.color(it == values.end() ? kNaN : it->second);
        for (const auto& ring : a.rings) {
            std::ostringstream pts;
            for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
                pts << (k ? " " : "") << num(10 + s * (ring[k].x - x0)) << ","
                    << num(top + s * (y1 - ring[k].y));
            }
            svg.raw("<polygon data-area=\"" + escape(a.id) + "\" points=\"" + pts.str() +
                    "\" fill=\"" + fill + "\" stroke=\"#555555\" stroke-width=\"0.5\"/>");
        }
    }
    const auto& pal = ColorScale::palette();
    const double lx = map_w + 30;
    for (std::size_t k = 0; k < pal.size(); ++k) {
        const double y = top + 18.0 * static_cast<double>(pal.size() - 1 - k);
        svg.rect(lx, y, 16, 16, pal[k], "#555555");
        const double lo = scale.lo + (scale.hi - scale.lo) * static_cast<double>(k) / pal.size();
        const double hi = scale.lo + (scale.hi - scale.lo) * static_cast<double>(k + 1) / pal.size();
        svg.text(lx + 22, y + 12, label(lo) + "-" + label(hi));
    }
    const double ny = top + 18.0 * static_cast<double>(pal.size()) + 6;
    svg.rect(lx, ny, 16, 16, ColorScale::kNoData, "#555555");
    svg.text(lx + 22, ny + 12, "no estimate");
    return svg.str();
}

std::string scatter(const csv::Table& direct, const csv::Table& estimates, const std::string& title) {
    const auto p_hat = column_by_area(direct, "p_hat");
    const auto c_flag = direct.find("flag");
    std::map<std::string, std::string> flag;
    if (c_flag) {
        const auto c_id = direct.require("area_id");
        for (std::size_t r = 0; r < direct.size(); ++r) {
            flag[direct.at(r, c_id)] = direct.at(r, *c_flag);
        }
    }
    const auto rows = estimate_rows(estimates);
    const double left = 50, top = 30, size = 360;
    Svg svg(left + size + 30, top + size + 50);
    svg.text(left, 18, title, "font-size=\"13\"");
    auto px = [&](double v) { return left + size * std::clamp(v, 0.0, 1.0); };
    auto py = [&](double v) { return top + size * (1.0 - std::clamp(v, 0.0, 1.0)); };
    svg.line(left, top + size, left + size, top + size, "#333333");
    svg.line(left, top, left, top + size, "#333333");
    svg.line(px(0), py(0), px(1), py(1), "#aaaaaa");
    axis_ticks(svg, left, left + size, top + size, 0.0, 1.0, false);
    axis_ticks(svg, left, left, 0, 0.0, 1.0, true, top, top + size);
    svg.text(left + size / 2 - 30, top + size + 34, "direct estimate");
    for (const auto& r : rows) {
        if (std::isnan(r.mean)) {
            continue;
        }
        auto it = p_hat.find(r.id);
        const bool usable = it != p_hat.end() && !std::isnan(it->second) &&
                            (flag.empty() || flag[r.id] == "ok");
        if (usable) {
            svg.circle(px(it->second), py(r.mean), 3, "#225ea8", "point");
        } else {
            const double x = px(0), y = py(r.mean);
            svg.raw("<polygon class=\"sentinel\" data-area=\"" + escape(r.id) + "\" points=\"" +
                    num(x - 4) + "," + num(y + 4) + " " + num(x + 4) + "," + num(y + 4) + " " +
                    num(x) + "," + num(y - 4) + "\" fill=\"#d7301f\"/>");
        }
    }
    return svg.str();
}

std::string ridge(const csv::Table& draws, const csv::Table& estimates, const std::string& title) {
    const auto rows = estimate_rows(estimates);
    std::map<std::string, double> median;
    for (const auto& r : rows) {
        median[r.id] = std::isnan(r.median) ? r.mean : r.median;
    }
    const auto c_id = draws.require("area_id");
    std::vector<std::size_t> value_cols;
    for (std::size_t j = 0; j < draws.header().size(); ++j) {
        const auto& h = draws.header()[j];
        if (h.size() > 1 && h[0] == 'd' && std::isdigit(static_cast<unsigned char>(h[1]))) {
            value_cols.push_back(j);
        }
    }
    struct Trace {
        std::string id;
        double median;
        std::vector<double> v;
    };
    std::vector<Trace> traces;
    for (std::size_t r = 0; r < draws.size(); ++r) {
        auto m = median.find(draws.at(r, c_id));
        if (m == median.end() || std::isnan(m->second)) {
            continue;
        }
        Trace t{draws.at(r, c_id), m->second, {}};
        for (std::size_t j : value_cols) {
            t.v.push_back(csv::parse_number(draws.at(r, j)));
        }
        traces.push_back(std::move(t));
    }
    std::stable_sort(traces.begin(), traces.end(),
                     [](const Trace& a, const Trace& b) { return a.median < b.median; });
    const double left = 90, top = 30, step = 16, plot_w = 420, amp = 36;
    const double height = top + step * static_cast<double>(traces.size()) + amp + 30;
    Svg svg(left + plot_w + 30, height);
    svg.text(left, 18, title, "font-size=\"13\"");
    constexpr int kGrid = 120;
    // Highest median at the top, so traces are drawn in reverse order.
    for (std::size_t k = traces.size(); k-- > 0;) {
        const auto& t = traces[k];
        const double base = top + amp + step * static_cast<double>(traces.size() - 1 - k);
        const auto n = static_cast<double>(t.v.size());
        double mean = std::accumulate(t.v.begin(), t.v.end(), 0.0) / n;
        double var = 0.0;
        for (double v : t.v) var += (v - mean) * (v - mean);
        const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
        const double h = std::max(1.06 * sd * std::pow(n, -0.2), 1e-3);
        std::vector<double> dens(kGrid + 1, 0.0);
        for (int g = 0; g <= kGrid; ++g) {
            const double x = static_cast<double>(g) / kGrid;
            for (double v : t.v) {
                const double z = (x - v) / h;
                dens[static_cast<std::size_t>(g)] += std::exp(-0.5 * z * z);
            }
        }
        const double peak = *std::max_element(dens.begin(), dens.end());
        std::ostringstream path;
        path << "M" << num(left) << "," << num(base);
        for (int g = 0; g <= kGrid; ++g) {
            const double x = left + plot_w * g / kGrid;
            const double y = base - (peak > 0 ? amp * dens[static_cast<std::size_t>(g)] / peak : 0.0);
            path << " L" << num(x) << "," << num(y);
        }
        path << " L" << num(left + plot_w) << "," << num(base) << " Z";
        svg.raw("<path class=\"trace\" data-area=\"" + escape(t.id) + "\" d=\"" + path.str() +
                "\" fill=\"#7fcdbb\" fill-opacity=\"0.8\" stroke=\"#225ea8\" stroke-width=\"0.6\"/>");
        svg.text(4, base, t.id);
    }
    const double axis_y = top + amp + step * static_cast<double>(traces.size());
    svg.line(left, axis_y, left + plot_w, axis_y, "#333333");
    axis_ticks(svg, left, left + plot_w, axis_y, 0.0, 1.0, false);
    return svg.str();
}

std::string overlay(const std::vector<csv::Table>& estimates, const std::string& title) {
    static const std::vector<std::string> colours{"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                                                  "#66a61e", "#e6ab02", "#a6761d", "#666666"};
    std::vector<std::string> ids;
    std::vector<std::map<std::string, double>> means;
    std::vector<std::string> tags;
    for (const auto& t : estimates) {
        means.push_back(column_by_area(t, "mean"));
        const auto c_tag = t.find("model_tag");
        tags.push_back(c_tag && t.size() > 0 ? t.at(0, *c_tag) : "model");
        for (const auto& [id, v] : means.back()) {
            if (!std::isnan(v) && std::find(ids.begin(), ids.end(), id) == ids.end()) {
                ids.push_back(id);
            }
        }
    }
    std::sort(ids.begin(), ids.end());
    const double left = 50, top = 30, plot_h = 300;
    const double col_w = std::max(8.0, 600.0 / std::max<std::size_t>(ids.size(), 1));
    const double plot_w = col_w * static_cast<double>(ids.size());
    Svg svg(left + plot_w + 160, top + plot_h + 80);
    svg.text(left, 18, title, "font-size=\"13\"");
    auto py = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };
    svg.line(left, top + plot_h, left + plot_w, top + plot_h, "#333333");
    svg.line(left, top, left, top + plot_h, "#333333");
    axis_ticks(svg, left, left, 0, 0.0, 1.0, true, top, top + plot_h);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double x = left + col_w * (static_cast<double>(i) + 0.5);
        svg.text(x - 3, top + plot_h + 14, ids[i],
                 "transform=\"rotate(90 " + num(x - 3) + " " + num(top + plot_h + 14) + ")\" font-size=\"8\"");
    }
    for (std::size_t m = 0; m < means.size(); ++m) {
        const auto& col = colours[m % colours.size()];
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto it = means[m].find(ids[i]);
            if (it != means[m].end() && !std::isnan(it->second)) {
                svg.circle(left + col_w * (static_cast<double>(i) + 0.5), py(it->second), 2.5, col,
                           "model" + std::to_string(m));
            }
        }
        svg.rect(left + plot_w + 20, top + 18.0 * static_cast<double>(m), 12, 12, col);
        svg.text(left + plot_w + 38, top + 18.0 * static_cast<double>(m) + 10, tags[m]);
    }
    return svg.str();
}

}  // namespace prevmap::report
