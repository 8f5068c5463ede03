#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "semaforge/image.hpp"

namespace semaforge {

// Image coordinates: x to the right, y down, pixel (i, j) centred at
// (j + 0.5, i + 0.5).
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using Polygon = std::vector<Point>;

// Counter-clockwise (in y-down coordinates: clockwise on screen) hull without
// repeated or collinear vertices. Throws GeometryError when the points span
// no area.
Polygon convex_hull(std::span<const Point> points);

// Hull of every vertex displaced by `radius` in 16 evenly spaced directions:
// a convex polygon approximating the Minkowski sum with a disc.
Polygon dilate(const Polygon& hull, double radius);

// Absolute shoelace area.
double polygon_area(const Polygon& poly);

// Even-odd rule; points exactly on an edge may land on either side.
bool point_in_polygon(const Polygon& poly, Point p);

struct BoundingBox {
  double min_x, min_y, max_x, max_y;
  double diagonal() const;
};
BoundingBox bounding_box(const Polygon& poly);

Polygon translate(const Polygon& poly, double dx, double dy);

// Even-odd scanline fill on pixel centres. Parts of the polygon outside the
// image are clipped; `clipped`, when given, reports whether that happened.
Mask rasterize(const Polygon& poly, std::size_t height, std::size_t width,
               bool* clipped = nullptr);

}  // namespace semaforge
