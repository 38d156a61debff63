#include "prevmap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace prevmap::geometry {

bool contains(std::span<const Ring> rings, Point p) {
    bool inside = false;
    for (const auto& ring : rings) {
        const std::size_t n = ring.size();
        if (n < 2) {
            continue;
        }
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const Point& a = ring[i];
            const Point& b = ring[j];
            if ((a.y > p.y) != (b.y > p.y)) {
                const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if (p.x < x_cross) {
                    inside = !inside;
                }
            }
        }
    }
    return inside;
}

double point_segment_distance(Point p, Point a, Point b) {
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) {
        t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
    }
    return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

double boundary_distance(std::span<const Ring> rings, Point p) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& ring : rings) {
        for (std::size_t i = 1; i < ring.size(); ++i) {
            best = std::min(best, point_segment_distance(p, ring[i - 1], ring[i]));
        }
    }
    return best;
}

bool on_boundary(std::span<const Ring> rings, Point p, double tol) {
    return boundary_distance(rings, p) <= tol;
}

double signed_area(const Ring& ring) {
    double acc = 0.0;
    for (std::size_t i = 1; i < ring.size(); ++i) {
        acc += ring[i - 1].x * ring[i].y - ring[i].x * ring[i - 1].y;
    }
    return 0.5 * acc;
}

bool is_closed(const Ring& ring) {
    return ring.size() >= 4 && ring.front() == ring.back();
}

}  // namespace prevmap::geometry
