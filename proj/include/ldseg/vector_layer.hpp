#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldseg/common.hpp"

namespace ldseg::geo {

// Class ids: 0 background, 1 pipeline, 2 road, 3 cutline.
enum : std::uint8_t { kBackground = 0, kPipeline = 1, kRoad = 2, kCutline = 3 };

inline const char* class_name(std::uint8_t id) {
  switch (id) {
    case kPipeline: return "pipeline";
    case kRoad: return "road";
    case kCutline: return "cutline";
    default: return "background";
  }
}

inline std::uint8_t class_id_from_name(const std::string& name) {
  if (name == "pipeline") return kPipeline;
  if (name == "road") return kRoad;
  if (name == "cutline") return kCutline;
  throw ValueError("vector: unknown feature class: " + name);
}

struct Point {
  double x = 0.0, y = 0.0;
};

/// Polygon as a ring set: first ring is the outer boundary, the rest are
/// holes (even-odd semantics). Rings are stored open (no repeated last point).
struct Polygon {
  std::vector<std::vector<Point>> rings;
};

/// Polyline buffered to width_m (a capsule around the segment chain).
struct Polyline {
  std::vector<Point> points;
  double width_m = 0.0;
};

struct Feature {
  std::variant<Polygon, Polyline> geometry;
  std::uint8_t class_id = kBackground;
};

struct VectorLayer {
  std::vector<Feature> features;
};

namespace detail {

inline double ring_signed_area(const std::vector<Point>& ring) {
  double a = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = ring[i];
    const Point& q = ring[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

inline bool segments_properly_intersect(const Point& a, const Point& b, const Point& c,
                                        const Point& d) {
  auto cross = [](const Point& o, const Point& p, const Point& q) {
    return (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x);
  };
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

inline void validate_feature(const Feature& f, std::size_t index) {
  auto fail = [index](const std::string& why) {
    throw ValueError("vector: invalid geometry in feature " + std::to_string(index) + ": " + why);
  };
  auto check_finite = [&](const std::vector<Point>& pts) {
    for (const auto& p : pts)
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) fail("non-finite coordinate");
  };
  if (f.class_id < 1 || f.class_id > 3) fail("class id must be 1..3");
  if (const auto* poly = std::get_if<Polygon>(&f.geometry)) {
    if (poly->rings.empty()) fail("polygon has no rings");
    for (const auto& ring : poly->rings) {
      if (ring.size() < 3) fail("ring has fewer than 3 vertices");
      check_finite(ring);
      if (std::abs(ring_signed_area(ring)) <= 0.0) fail("degenerate ring (zero area)");
      // non-adjacent self-intersection scan
      const std::size_t n = ring.size();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 2; j < n; ++j) {
          if (i == 0 && j == n - 1) continue;  // shared closing vertex
          if (segments_properly_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]))
            fail("self-intersecting ring");
        }
      }
    }
  } else {
    const auto& line = std::get<Polyline>(f.geometry);
    if (line.points.size() < 2) fail("polyline has fewer than 2 points");
    check_finite(line.points);
    if (!(line.width_m > 0.0)) fail("polyline width must be positive");
  }
}

}  // namespace detail

inline void validate(const VectorLayer& layer) {
  for (std::size_t i = 0; i < layer.features.size(); ++i)
    detail::validate_feature(layer.features[i], i);
}

// ---------------------------------------------------------------------------
// GeoJSON FeatureCollection IO. Feature property "class" names the class;
// LineString features carry a numeric "width_m".

inline VectorLayer read_geojson(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("geojson: cannot open: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("geojson: parse error in " + path + ": " + e.what());
  }

  VectorLayer layer;
  try {
    if (j.at("type").get<std::string>() != "FeatureCollection")
      throw IoError("geojson: expected a FeatureCollection: " + path);
    auto parse_ring = [](const nlohmann::json& coords) {
      std::vector<Point> ring;
      for (const auto& pt : coords) ring.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      if (ring.size() >= 2 && ring.front().x == ring.back().x && ring.front().y == ring.back().y)
        ring.pop_back();  // GeoJSON rings repeat the first point
      return ring;
    };
    auto parse_line = [](const nlohmann::json& coords) {
      std::vector<Point> pts;
      for (const auto& pt : coords) pts.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      return pts;
    };
    for (const auto& feat : j.at("features")) {
      const auto& props = feat.at("properties");
      const std::uint8_t cid = class_id_from_name(props.at("class").get<std::string>());
      const auto& geom = feat.at("geometry");
      const std::string type = geom.at("type").get<std::string>();
      const auto& coords = geom.at("coordinates");
      if (type == "Polygon") {
        Polygon poly;
        for (const auto& ring : coords) poly.rings.push_back(parse_ring(ring));
        layer.features.push_back({std::move(poly), cid});
      } else if (type == "MultiPolygon") {
        for (const auto& part : coords) {
          Polygon poly;
          for (const auto& ring : part) poly.rings.push_back(parse_ring(ring));
          layer.features.push_back({std::move(poly), cid});
        }
      } else if (type == "LineString" || type == "MultiLineString") {
        if (!props.contains("width_m") || !props.at("width_m").is_number())
          throw IoError("geojson: LineString feature missing numeric width_m: " + path);
        const double width = props.at("width_m").get<double>();
        if (type == "LineString") {
          layer.features.push_back({Polyline{parse_line(coords), width}, cid});
        } else {
          for (const auto& part : coords)
            layer.features.push_back({Polyline{parse_line(part), width}, cid});
        }
      } else {
        throw IoError("geojson: unsupported geometry type " + type + ": " + path);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("geojson: malformed feature in " + path + ": " + e.what());
  }
  validate(layer);
  return layer;
}

inline void write_geojson(const VectorLayer& layer, const std::string& path) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : layer.features) {
    nlohmann::json geom, props;
    props["class"] = class_name(f.class_id);
    if (const auto* poly = std::get_if<Polygon>(&f.geometry)) {
      geom["type"] = "Polygon";
      nlohmann::json rings = nlohmann::json::array();
      for (const auto& ring : poly->rings) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : ring) pts.push_back({p.x, p.y});
        pts.push_back({ring.front().x, ring.front().y});
        rings.push_back(std::move(pts));
      }
      geom["coordinates"] = std::move(rings);
    } else {
      const auto& line = std::get<Polyline>(f.geometry);
      geom["type"] = "LineString";
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& p : line.points) pts.push_back({p.x, p.y});
      geom["coordinates"] = std::move(pts);
      props["width_m"] = line.width_m;
    }
    features.push_back({{"type", "Feature"}, {"geometry", std::move(geom)}, {"properties", std::move(props)}});
  }
  nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", std::move(features)}};
  std::ofstream os(path);
  if (!os) throw IoError("geojson: cannot write: " + path);
  os << doc.dump(2) << "\n";
}

}  // namespace ldseg::geo
