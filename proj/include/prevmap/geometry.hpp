#pragma once

#include <span>
#include <vector>

namespace prevmap::geometry {

struct Point {
    double x = 0.0;  // longitude
    double y = 0.0;  // latitude
    friend bool operator==(const Point&, const Point&) = default;
};

/// Closed ring: first vertex repeated as last.
using Ring = std::vector<Point>;

/// Even-odd rule across all rings (holes and multi-part shapes fall out naturally).
bool contains(std::span<const Ring> rings, Point p);

/// True when p lies on a ring edge within `tol`.
bool on_boundary(std::span<const Ring> rings, Point p, double tol = 1e-12);

double point_segment_distance(Point p, Point a, Point b);
/// Minimum distance from p to any ring edge; +inf for no edges.
double boundary_distance(std::span<const Ring> rings, Point p);

/// Shoelace area; positive for counter-clockwise rings.
double signed_area(const Ring& ring);

bool is_closed(const Ring& ring);

}  // namespace prevmap::geometry
