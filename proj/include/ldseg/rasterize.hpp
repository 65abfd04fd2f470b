#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ldseg/raster.hpp"
#include "ldseg/vector_layer.hpp"

// Vector-to-raster label generation with both semantics: a pixel is labeled
// when a feature touches any portion of it (touch-any), or only when the
// feature contains the pixel center (center). Overlaps resolve by priority
// road > pipeline > cutline.
namespace ldseg::geo {

inline constexpr double kContactTol = 1e-9;  // meters; boundary-contact tolerance

namespace detail {

inline int class_priority(std::uint8_t id) {
  switch (id) {
    case kRoad: return 3;
    case kPipeline: return 2;
    case kCutline: return 1;
    default: return 0;
  }
}

struct Rect {
  double x0, y0, x1, y1;  // x0<x1, y0<y1

  bool contains(const Point& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

/// Even-odd rule over every ring; holes flip containment naturally.
inline bool point_in_polygon(const Point& p, const Polygon& poly) {
  bool inside = false;
  for (const auto& ring : poly.rings) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point& a = ring[i];
      const Point& b = ring[j];
      if ((a.y > p.y) != (b.y > p.y) &&
          p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x)
        inside = !inside;
    }
  }
  return inside;
}

inline double point_segment_dist(const Point& p, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double px = a.x + t * dx - p.x, py = a.y + t * dy - p.y;
  return std::sqrt(px * px + py * py);
}

inline double point_polyline_dist(const Point& p, const std::vector<Point>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    best = std::min(best, point_segment_dist(p, pts[i], pts[i + 1]));
  return best;
}

inline double segment_segment_dist(const Point& a, const Point& b, const Point& c,
                                   const Point& d) {
  if (segments_properly_intersect(a, b, c, d)) return 0.0;
  return std::min(std::min(point_segment_dist(a, c, d), point_segment_dist(b, c, d)),
                  std::min(point_segment_dist(c, a, b), point_segment_dist(d, a, b)));
}

inline double segment_rect_dist(const Point& a, const Point& b, const Rect& r) {
  if (r.contains(a) || r.contains(b)) return 0.0;
  const Point c0{r.x0, r.y0}, c1{r.x1, r.y0}, c2{r.x1, r.y1}, c3{r.x0, r.y1};
  double best = segment_segment_dist(a, b, c0, c1);
  best = std::min(best, segment_segment_dist(a, b, c1, c2));
  best = std::min(best, segment_segment_dist(a, b, c2, c3));
  best = std::min(best, segment_segment_dist(a, b, c3, c0));
  return best;
}

inline double polyline_rect_dist(const std::vector<Point>& pts, const Rect& r) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    best = std::min(best, segment_rect_dist(pts[i], pts[i + 1], r));
  return best;
}

// Sutherland-Hodgman clip of a ring against an axis-aligned rectangle.
// side: 0 x>=v, 1 x<=v, 2 y>=v, 3 y<=v.
inline std::vector<Point> clip_half_plane(const std::vector<Point>& ring, int side, double v) {
  auto inside = [&](const Point& p) {
    switch (side) {
      case 0: return p.x >= v;
      case 1: return p.x <= v;
      case 2: return p.y >= v;
      default: return p.y <= v;
    }
  };
  auto intersect = [&](const Point& a, const Point& b) {
    if (side <= 1) {
      const double t = (v - a.x) / (b.x - a.x);
      return Point{v, a.y + t * (b.y - a.y)};
    }
    const double t = (v - a.y) / (b.y - a.y);
    return Point{a.x + t * (b.x - a.x), v};
  };
  std::vector<Point> out;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& cur = ring[i];
    const Point& prev = ring[(i + n - 1) % n];
    const bool cin = inside(cur), pin = inside(prev);
    if (cin) {
      if (!pin) out.push_back(intersect(prev, cur));
      out.push_back(cur);
    } else if (pin) {
      out.push_back(intersect(prev, cur));
    }
  }
  return out;
}

inline double ring_rect_overlap_area(const std::vector<Point>& ring, const Rect& r) {
  std::vector<Point> clipped = clip_half_plane(ring, 0, r.x0);
  if (clipped.size() < 3) return 0.0;
  clipped = clip_half_plane(clipped, 1, r.x1);
  if (clipped.size() < 3) return 0.0;
  clipped = clip_half_plane(clipped, 2, r.y0);
  if (clipped.size() < 3) return 0.0;
  clipped = clip_half_plane(clipped, 3, r.y1);
  if (clipped.size() < 3) return 0.0;
  return ring_signed_area(clipped);
}

/// Area of the polygon's solid region inside the rectangle: outer ring
/// oriented CCW contributes positively, holes (CW) negatively.
inline double polygon_rect_overlap_area(const Polygon& poly, const Rect& r) {
  double area = 0.0;
  for (std::size_t k = 0; k < poly.rings.size(); ++k) {
    std::vector<Point> ring = poly.rings[k];
    const double sa = ring_signed_area(ring);
    const bool want_ccw = k == 0;
    if ((sa > 0.0) != want_ccw) std::reverse(ring.begin(), ring.end());
    area += ring_rect_overlap_area(ring, r);
  }
  return area;
}

inline double polygon_rect_boundary_dist(const Polygon& poly, const Rect& r) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ring : poly.rings) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
      best = std::min(best, segment_rect_dist(ring[i], ring[(i + 1) % n], r));
      if (best == 0.0) return 0.0;
    }
  }
  return best;
}

struct FeatureBounds {
  double min_x, min_y, max_x, max_y;
};

inline FeatureBounds feature_bounds(const Feature& f) {
  FeatureBounds b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  auto eat = [&](const std::vector<Point>& pts) {
    for (const auto& p : pts) {
      b.min_x = std::min(b.min_x, p.x);
      b.min_y = std::min(b.min_y, p.y);
      b.max_x = std::max(b.max_x, p.x);
      b.max_y = std::max(b.max_y, p.y);
    }
  };
  if (const auto* poly = std::get_if<Polygon>(&f.geometry)) {
    for (const auto& ring : poly->rings) eat(ring);
  } else {
    const auto& line = std::get<Polyline>(f.geometry);
    eat(line.points);
    const double half = line.width_m / 2.0;
    b.min_x -= half;
    b.min_y -= half;
    b.max_x += half;
    b.max_y += half;
  }
  return b;
}

template <typename Predicate>
void rasterize_with(const VectorLayer& layer, RasterGrid& labels, Predicate&& touches) {
  const double ps = labels.pixel_size_m;
  for (std::size_t fi = 0; fi < layer.features.size(); ++fi) {
    const Feature& f = layer.features[fi];
    const FeatureBounds fb = feature_bounds(f);
    const int j0 = std::max(0, static_cast<int>(std::floor((fb.min_x - labels.origin_x) / ps)) - 1);
    const int j1 = std::min(labels.width - 1,
                            static_cast<int>(std::ceil((fb.max_x - labels.origin_x) / ps)) + 1);
    const int i0 = std::max(0, static_cast<int>(std::floor((labels.origin_y - fb.max_y) / ps)) - 1);
    const int i1 = std::min(labels.height - 1,
                            static_cast<int>(std::ceil((labels.origin_y - fb.min_y) / ps)) + 1);
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        auto cur = static_cast<std::uint8_t>(labels.at(0, i, j));
        if (class_priority(f.class_id) <= class_priority(cur)) continue;
        if (touches(f, i, j)) labels.at(0, i, j) = static_cast<float>(f.class_id);
      }
    }
  }
}

}  // namespace detail

/// Labels every pixel whose rectangle the feature area intersects with
/// positive area, or merely touches within kContactTol (Fig. 2d semantics).
inline RasterGrid rasterize_touch_any(const VectorLayer& layer, const RasterGrid& tmpl) {
  validate(layer);
  RasterGrid labels = RasterGrid::make(tmpl.width, tmpl.height, 1, tmpl.origin_x, tmpl.origin_y,
                                       tmpl.pixel_size_m);
  labels.band_names = {"label"};
  labels.dtype = RasterDtype::uint8;
  labels.nodata = 255.0f;

  const double ps = tmpl.pixel_size_m;
  detail::rasterize_with(layer, labels, [&](const Feature& f, int i, int j) {
    const detail::Rect rect{labels.origin_x + j * ps, labels.origin_y - (i + 1) * ps,
                            labels.origin_x + (j + 1) * ps, labels.origin_y - i * ps};
    if (const auto* poly = std::get_if<Polygon>(&f.geometry)) {
      if (detail::polygon_rect_overlap_area(*poly, rect) > 1e-12) return true;
      return detail::polygon_rect_boundary_dist(*poly, rect) <= kContactTol;
    }
    const auto& line = std::get<Polyline>(f.geometry);
    return detail::polyline_rect_dist(line.points, rect) <= line.width_m / 2.0 + kContactTol;
  });
  return labels;
}

/// Labels only pixels whose center point lies inside the feature
/// (Fig. 2c semantics; thin features fragment).
inline RasterGrid rasterize_center(const VectorLayer& layer, const RasterGrid& tmpl) {
  validate(layer);
  RasterGrid labels = RasterGrid::make(tmpl.width, tmpl.height, 1, tmpl.origin_x, tmpl.origin_y,
                                       tmpl.pixel_size_m);
  labels.band_names = {"label"};
  labels.dtype = RasterDtype::uint8;
  labels.nodata = 255.0f;

  detail::rasterize_with(layer, labels, [&](const Feature& f, int i, int j) {
    const Point center{labels.center_x(j), labels.center_y(i)};
    if (const auto* poly = std::get_if<Polygon>(&f.geometry))
      return detail::point_in_polygon(center, *poly);
    const auto& line = std::get<Polyline>(f.geometry);
    return detail::point_polyline_dist(center, line.points) <= line.width_m / 2.0;
  });
  return labels;
}

}  // namespace ldseg::geo
