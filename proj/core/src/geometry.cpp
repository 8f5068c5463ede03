#include "semaforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "semaforge/errors.hpp"

namespace semaforge {

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

Polygon convex_hull(std::span<const Point> points) {
  std::vector<Point> pts(points.begin(), points.end());
  for (const Point& p : pts) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw GeometryError("convex_hull: non-finite point");
    }
  }
  std::sort(pts.begin(), pts.end(),
            [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) {
    throw GeometryError("convex_hull: need at least 3 distinct points, got " +
                        std::to_string(pts.size()));
  }

  // Andrew's monotone chain; collinear points are dropped.
  Polygon hull(2 * pts.size());
  std::size_t k = 0;
  for (const Point& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3 || polygon_area(hull) == 0.0) {
    throw GeometryError("convex_hull: points are collinear");
  }
  return hull;
}

Polygon dilate(const Polygon& hull, double radius) {
  if (radius < 0.0) throw GeometryError("dilate: negative radius");
  if (radius == 0.0) return hull;
  constexpr int kDirections = 16;
  std::vector<Point> pts;
  pts.reserve(hull.size() * kDirections);
  for (const Point& v : hull) {
    for (int d = 0; d < kDirections; ++d) {
      const double a = 2.0 * std::numbers::pi * d / kDirections;
      pts.push_back({v.x + radius * std::cos(a), v.y + radius * std::sin(a)});
    }
  }
  return convex_hull(pts);
}

double polygon_area(const Polygon& poly) {
  double twice = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return std::abs(twice) * 0.5;
}

bool point_in_polygon(const Polygon& poly, Point p) {
  bool inside = false;
  for (std::size_t i = 0, n = poly.size(), j = n - 1; i < n; j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

double BoundingBox::diagonal() const { return std::hypot(max_x - min_x, max_y - min_y); }

BoundingBox bounding_box(const Polygon& poly) {
  if (poly.empty()) throw GeometryError("bounding_box: empty polygon");
  BoundingBox b{poly[0].x, poly[0].y, poly[0].x, poly[0].y};
  for (const Point& p : poly) {
    b.min_x = std::min(b.min_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_x = std::max(b.max_x, p.x);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

Polygon translate(const Polygon& poly, double dx, double dy) {
  Polygon out = poly;
  for (Point& p : out) {
    p.x += dx;
    p.y += dy;
  }
  return out;
}

Mask rasterize(const Polygon& poly, std::size_t height, std::size_t width, bool* clipped) {
  if (height == 0 || width == 0) throw ContractError("rasterize: image size must be positive");
  Mask mask(height, width);
  if (clipped) *clipped = false;
  if (poly.size() < 3) return mask;

  const BoundingBox box = bounding_box(poly);
  if (clipped) {
    *clipped = box.min_x < 0.0 || box.min_y < 0.0 || box.max_x > static_cast<double>(width) ||
               box.max_y > static_cast<double>(height);
  }

  std::vector<double> xs;
  const std::size_t n = poly.size();
  for (std::size_t row = 0; row < height; ++row) {
    const double yc = static_cast<double>(row) + 0.5;
    if (yc < box.min_y || yc > box.max_y) continue;
    xs.clear();
    // Half-open edge rule (a.y > yc) != (b.y > yc) matches point_in_polygon.
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point& a = poly[i];
      const Point& b = poly[j];
      if ((a.y > yc) != (b.y > yc)) xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Pixel centres xc = col + 0.5 with xs[k] <= xc < xs[k+1] (strict on
      // the right, as in point_in_polygon's p.x < x test).
      const double lo = std::ceil(xs[k] - 0.5);
      const double hi = std::ceil(xs[k + 1] - 0.5);  // first excluded column
      const long c0 = std::max(0L, static_cast<long>(lo));
      const long c1 = std::min(static_cast<long>(width), static_cast<long>(hi));
      for (long c = c0; c < c1; ++c) mask.at(row, static_cast<std::size_t>(c)) = 1;
    }
  }
  return mask;
}

}  // namespace semaforge
