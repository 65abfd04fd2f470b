#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "ldseg/png_io.hpp"
#include "ldseg/rasterize.hpp"
#include "ldseg/tiles.hpp"

using namespace ldseg;
using geo::Feature;
using geo::Point;
using geo::Polygon;
using geo::Polyline;
using geo::RasterGrid;
using geo::VectorLayer;

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ldseg_geo_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// ---- independent oracles ---------------------------------------------------

// Winding-number point-in-polygon (the implementation uses even-odd crossing).
// Rings are re-oriented outer-CCW / holes-CW so the winding count is 0 inside
// holes and nonzero inside the solid region.
bool winding_inside(const Point& p, const Polygon& poly) {
  auto is_left = [](const Point& a, const Point& b, const Point& q) {
    return (b.x - a.x) * (q.y - a.y) - (q.x - a.x) * (b.y - a.y);
  };
  int wn = 0;
  for (std::size_t k = 0; k < poly.rings.size(); ++k) {
    std::vector<Point> ring = poly.rings[k];
    double area = 0.0;
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const Point& a = ring[i];
      const Point& b = ring[(i + 1) % ring.size()];
      area += a.x * b.y - b.x * a.y;
    }
    const bool want_ccw = k == 0;
    if ((area > 0.0) != want_ccw) std::reverse(ring.begin(), ring.end());
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const Point& a = ring[i];
      const Point& b = ring[(i + 1) % ring.size()];
      if (a.y <= p.y) {
        if (b.y > p.y && is_left(a, b, p) > 0) ++wn;
      } else {
        if (b.y <= p.y && is_left(a, b, p) < 0) --wn;
      }
    }
  }
  return wn != 0;
}

bool oracle_point_in_feature(const Point& p, const Feature& f) {
  if (const auto* poly = std::get_if<Polygon>(&f.geometry)) return winding_inside(p, *poly);
  const auto& line = std::get<Polyline>(f.geometry);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.points.size(); ++i) {
    const Point& a = line.points[i];
    const Point& b = line.points[i + 1];
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    const double t = len2 > 0 ? std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, std::hypot(a.x + t * dx - p.x, a.y + t * dy - p.y));
  }
  return best <= line.width_m / 2.0;
}

// 16x16 subpixel coverage fraction of one class at pixel (i, j).
double oracle_coverage(const VectorLayer& layer, const RasterGrid& grid, int i, int j,
                       std::uint8_t cid) {
  const double ps = grid.pixel_size_m;
  int hits = 0;
  for (int si = 0; si < 16; ++si) {
    for (int sj = 0; sj < 16; ++sj) {
      const Point p{grid.origin_x + (j + (sj + 0.5) / 16.0) * ps,
                    grid.origin_y - (i + (si + 0.5) / 16.0) * ps};
      for (const auto& f : layer.features) {
        if (f.class_id != cid) continue;
        if (oracle_point_in_feature(p, f)) {
          ++hits;
          break;
        }
      }
    }
  }
  return hits / 256.0;
}

int priority_of(std::uint8_t cid) {
  return cid == geo::kRoad ? 3 : cid == geo::kPipeline ? 2 : cid == geo::kCutline ? 1 : 0;
}

Polygon random_polygon(Rng& rng, double cx, double cy, double radius) {
  // star-convex, hence simple
  const int n = 5 + static_cast<int>(rng.uniform_int(5));
  Polygon poly;
  std::vector<Point> ring;
  for (int k = 0; k < n; ++k) {
    const double theta = 2.0 * 3.14159265358979323846 * k / n;
    const double r = radius * rng.uniform(0.4, 1.0);
    ring.push_back({cx + r * std::cos(theta), cy + r * std::sin(theta)});
  }
  poly.rings.push_back(std::move(ring));
  return poly;
}

}  // namespace

// ---- rasterization ----------------------------------------------------------

TEST_CASE("touch-any labels a quarter-pixel polygon; center mode does not") {
  RasterGrid tmpl = RasterGrid::make(2, 2, 1, 0.0, 20.0, 10.0);
  // pixel (0,0) covers x in [0,10], y in [10,20]; center (5,15).
  // square occupying the top-left quarter: x in [0,4.8], y in [15.2,20]
  Polygon quarter;
  quarter.rings.push_back({{0.1, 15.2}, {4.8, 15.2}, {4.8, 19.9}, {0.1, 19.9}});
  VectorLayer layer;
  layer.features.push_back({quarter, geo::kRoad});

  auto touch = geo::rasterize_touch_any(layer, tmpl);
  auto center = geo::rasterize_center(layer, tmpl);
  REQUIRE(touch.at(0, 0, 0) == geo::kRoad);
  REQUIRE(center.at(0, 0, 0) == geo::kBackground);
}

TEST_CASE("narrow polyline clipping a pixel edge is caught by touch-any") {
  RasterGrid tmpl = RasterGrid::make(2, 2, 1, 0.0, 20.0, 10.0);
  // vertical 1 m line just left of the pixel boundary x=10
  VectorLayer layer;
  layer.features.push_back({Polyline{{{9.9, -5.0}, {9.9, 25.0}}, 1.0}, geo::kCutline});
  auto touch = geo::rasterize_touch_any(layer, tmpl);
  REQUIRE(touch.at(0, 0, 0) == geo::kCutline);  // slice [9.4, 10]
  REQUIRE(touch.at(0, 0, 1) == geo::kCutline);  // slice [10, 10.4]
  REQUIRE(oracle_coverage(layer, tmpl, 0, 0, geo::kCutline) > 1e-3);
  REQUIRE(oracle_coverage(layer, tmpl, 0, 1, geo::kCutline) > 1e-3);
}

TEST_CASE("thin polyline between pixel-center rows fragments to nothing in center mode") {
  RasterGrid tmpl = RasterGrid::make(4, 2, 1, 0.0, 20.0, 10.0);
  // centers sit at y=5 and y=15; a 3 m corridor along y=10 misses both rows
  VectorLayer layer;
  layer.features.push_back({Polyline{{{-5.0, 10.0}, {45.0, 10.0}}, 3.0}, geo::kCutline});
  auto center = geo::rasterize_center(layer, tmpl);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) REQUIRE(center.at(0, i, j) == geo::kBackground);
  // the same corridor is continuous under touch-any
  auto touch = geo::rasterize_touch_any(layer, tmpl);
  for (int j = 0; j < 4; ++j) {
    REQUIRE(touch.at(0, 0, j) == geo::kCutline);
    REQUIRE(touch.at(0, 1, j) == geo::kCutline);
  }
}

TEST_CASE("random layers: touch-any matches the supersampled coverage oracle") {
  Rng rng(71);
  for (int trial = 0; trial < 12; ++trial) {
    RasterGrid tmpl = RasterGrid::make(12, 12, 1, 0.0, 120.0, 10.0);
    VectorLayer layer;
    const int n_feat = 2 + static_cast<int>(rng.uniform_int(4));
    for (int k = 0; k < n_feat; ++k) {
      const std::uint8_t cid = static_cast<std::uint8_t>(1 + rng.uniform_int(3));
      if (rng.bernoulli(0.6)) {
        layer.features.push_back(
            {random_polygon(rng, rng.uniform(10, 110), rng.uniform(10, 110), rng.uniform(8, 30)),
             cid});
      } else {
        layer.features.push_back(
            {Polyline{{{rng.uniform(-10, 130), rng.uniform(-10, 130)},
                       {rng.uniform(-10, 130), rng.uniform(-10, 130)}},
                      rng.uniform(2.0, 20.0)},
             cid});
      }
    }
    auto touch = geo::rasterize_touch_any(layer, tmpl);
    auto center = geo::rasterize_center(layer, tmpl);
    for (int i = 0; i < 12; ++i) {
      for (int j = 0; j < 12; ++j) {
        // touch-any is a superset of center labeling
        if (center.at(0, i, j) != geo::kBackground) REQUIRE(touch.at(0, i, j) != geo::kBackground);

        double cov[4] = {0, 0, 0, 0};
        for (std::uint8_t c = 1; c <= 3; ++c) cov[c] = oracle_coverage(layer, tmpl, i, j, c);
        bool decisive = true;
        for (std::uint8_t c = 1; c <= 3; ++c)
          if (cov[c] > 0.0 && cov[c] <= 2e-3) decisive = false;
        if (!decisive) continue;
        std::uint8_t expect = geo::kBackground;
        for (std::uint8_t c = 1; c <= 3; ++c)
          if (cov[c] > 1e-3 && priority_of(c) > priority_of(expect)) expect = c;
        if (expect != geo::kBackground) {
          INFO("trial " << trial << " pixel " << i << "," << j);
          REQUIRE(static_cast<std::uint8_t>(touch.at(0, i, j)) == expect);
        }
      }
    }
  }
}

TEST_CASE("random polygon layers: center mode matches the winding oracle exactly") {
  Rng rng(73);
  for (int trial = 0; trial < 12; ++trial) {
    RasterGrid tmpl = RasterGrid::make(10, 10, 1, 0.0, 100.0, 10.0);
    VectorLayer layer;
    for (int k = 0; k < 3; ++k)
      layer.features.push_back(
          {random_polygon(rng, rng.uniform(10, 90), rng.uniform(10, 90), rng.uniform(8, 35)),
           static_cast<std::uint8_t>(1 + rng.uniform_int(3))});
    auto center = geo::rasterize_center(layer, tmpl);
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) {
        std::uint8_t expect = geo::kBackground;
        const Point p{tmpl.center_x(j), tmpl.center_y(i)};
        for (const auto& f : layer.features)
          if (oracle_point_in_feature(p, f) && priority_of(f.class_id) > priority_of(expect))
            expect = f.class_id;
        REQUIRE(static_cast<std::uint8_t>(center.at(0, i, j)) == expect);
      }
    }
  }
}

TEST_CASE("polygon holes are respected") {
  RasterGrid tmpl = RasterGrid::make(5, 5, 1, 0.0, 50.0, 10.0);
  Polygon donut;
  donut.rings.push_back({{2.0, 2.0}, {48.0, 2.0}, {48.0, 48.0}, {2.0, 48.0}});
  donut.rings.push_back({{18.0, 18.0}, {32.0, 18.0}, {32.0, 32.0}, {18.0, 32.0}});  // hole
  VectorLayer layer;
  layer.features.push_back({donut, geo::kRoad});
  auto touch = geo::rasterize_touch_any(layer, tmpl);
  auto center = geo::rasterize_center(layer, tmpl);
  // the center pixel (2,2) covers [20,30]^2, strictly inside the hole
  REQUIRE(center.at(0, 2, 2) == geo::kBackground);
  REQUIRE(touch.at(0, 2, 2) == geo::kBackground);
  REQUIRE(center.at(0, 0, 0) == geo::kRoad);
  REQUIRE(touch.at(0, 0, 0) == geo::kRoad);
}

TEST_CASE("overlap priority: road beats pipeline beats cutline") {
  RasterGrid tmpl = RasterGrid::make(1, 1, 1, 0.0, 10.0, 10.0);
  Polygon square;
  square.rings.push_back({{1.0, 1.0}, {9.0, 1.0}, {9.0, 9.0}, {1.0, 9.0}});
  for (auto [first, second, winner] :
       {std::tuple<std::uint8_t, std::uint8_t, std::uint8_t>{geo::kCutline, geo::kRoad, geo::kRoad},
        {geo::kRoad, geo::kCutline, geo::kRoad},
        {geo::kPipeline, geo::kCutline, geo::kPipeline},
        {geo::kPipeline, geo::kRoad, geo::kRoad}}) {
    VectorLayer layer;
    layer.features.push_back({square, first});
    layer.features.push_back({square, second});
    REQUIRE(static_cast<std::uint8_t>(geo::rasterize_touch_any(layer, tmpl).at(0, 0, 0)) == winner);
    REQUIRE(static_cast<std::uint8_t>(geo::rasterize_center(layer, tmpl).at(0, 0, 0)) == winner);
  }
}

TEST_CASE("rasterization is translation equivariant") {
  Rng rng(79);
  const double dx = 1234.5, dy = -987.25;
  RasterGrid a = RasterGrid::make(8, 8, 1, 0.0, 80.0, 10.0);
  RasterGrid b = RasterGrid::make(8, 8, 1, dx, 80.0 + dy, 10.0);
  VectorLayer la, lb;
  for (int k = 0; k < 4; ++k) {
    auto poly = random_polygon(rng, rng.uniform(5, 75), rng.uniform(5, 75), rng.uniform(5, 25));
    Polygon shifted = poly;
    for (auto& ring : shifted.rings)
      for (auto& p : ring) {
        p.x += dx;
        p.y += dy;
      }
    const auto cid = static_cast<std::uint8_t>(1 + rng.uniform_int(3));
    la.features.push_back({poly, cid});
    lb.features.push_back({shifted, cid});
  }
  auto ra = geo::rasterize_touch_any(la, a);
  auto rb = geo::rasterize_touch_any(lb, b);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) REQUIRE(ra.at(0, i, j) == rb.at(0, i, j));
}

TEST_CASE("invalid geometry is rejected with the feature index") {
  RasterGrid tmpl = RasterGrid::make(2, 2, 1, 0.0, 20.0, 10.0);
  VectorLayer layer;
  Polygon ok;
  ok.rings.push_back({{1.0, 1.0}, {9.0, 1.0}, {9.0, 9.0}});
  layer.features.push_back({ok, geo::kRoad});
  Polygon bowtie;  // self-intersecting
  bowtie.rings.push_back({{0.0, 0.0}, {10.0, 10.0}, {10.0, 0.0}, {0.0, 10.0}});
  layer.features.push_back({bowtie, geo::kRoad});
  try {
    geo::rasterize_touch_any(layer, tmpl);
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    REQUIRE(std::string(e.what()).find("feature 1") != std::string::npos);
  }
  VectorLayer bad_width;
  bad_width.features.push_back({Polyline{{{0.0, 0.0}, {5.0, 5.0}}, 0.0}, geo::kCutline});
  REQUIRE_THROWS_AS(geo::rasterize_center(bad_width, tmpl), ValueError);
}

// ---- tiling, split, zscore, augment -----------------------------------------

namespace {

RasterGrid checkerboard_labels(int size, int tile, double ps) {
  RasterGrid g = RasterGrid::make(size, size, 1, 0.0, size * ps, ps);
  g.dtype = geo::RasterDtype::uint8;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) g.at(0, i, j) = (i / tile + j / tile) % 2 ? 1.f : 0.f;
  return g;
}

}  // namespace

TEST_CASE("tiling a fully valid, fully labeled 448x448 raster gives 4 tiles") {
  const int size = 448;
  RasterGrid img = RasterGrid::make(size, size, 4, 0.0, 4480.0, 10.0);
  for (auto& band : img.bands)
    for (auto& v : band) v = 0.5f;
  RasterGrid lab = RasterGrid::make(size, size, 1, 0.0, 4480.0, 10.0);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) lab.at(0, i, j) = (i + j) % 4 == 0 ? 2.f : 0.f;  // 25% roads
  auto ts = geo::tile(img, lab, 224);
  REQUIRE(ts.tiles.size() == 4);
  // origins are the window corners
  REQUIRE(ts.tiles[0].origin_x == 0.0);
  REQUIRE(ts.tiles[0].origin_y == 4480.0);
  REQUIRE(ts.tiles[3].origin_x == 2240.0);
  REQUIRE(ts.tiles[3].origin_y == 2240.0);
}

TEST_CASE("tiles without disturbance pixels are discarded") {
  const int size = 128;
  RasterGrid img = RasterGrid::make(size, size, 4, 0.0, 1280.0, 10.0);
  for (auto& band : img.bands)
    for (auto& v : band) v = 0.25f;
  RasterGrid lab = RasterGrid::make(size, size, 1, 0.0, 1280.0, 10.0);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) lab.at(0, i, j) = 3.f;  // only the top-left quadrant labeled
  auto ts = geo::tile(img, lab, 64);
  REQUIRE(ts.tiles.size() == 1);
  REQUIRE(ts.tiles[0].origin_x == 0.0);
}

TEST_CASE("keep/discard decisions match an independent window-count oracle") {
  Rng rng(83);
  const int size = 96, t = 16;
  RasterGrid img = RasterGrid::make(size, size, 2, 0.0, 960.0, 10.0);
  img.nodata = -9999.f;
  RasterGrid lab = RasterGrid::make(size, size, 1, 0.0, 960.0, 10.0);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const bool invalid = rng.bernoulli(0.6);
      for (int b = 0; b < 2; ++b) img.at(b, i, j) = invalid ? -9999.f : static_cast<float>(rng.uniform());
      lab.at(0, i, j) = rng.bernoulli(0.02) ? static_cast<float>(1 + rng.uniform_int(3)) : 0.f;
    }
  auto ts = geo::tile(img, lab, t);

  std::size_t expect_kept = 0;
  std::vector<std::pair<double, double>> expect_origins;
  for (int ti = 0; ti < size / t; ++ti)
    for (int tj = 0; tj < size / t; ++tj) {
      int n_valid = 0, n_dist = 0;
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
          bool valid = true;
          for (int b = 0; b < 2; ++b)
            if (img.at(b, ti * t + i, tj * t + j) == -9999.f) valid = false;
          n_valid += valid;
          const auto l = static_cast<int>(lab.at(0, ti * t + i, tj * t + j));
          n_dist += l >= 1 && l <= 3;
        }
      const double frac_valid = static_cast<double>(n_valid) / (t * t);
      const double frac_dist = static_cast<double>(n_dist) / (t * t);
      if (frac_valid >= 0.05 && frac_dist >= 0.01) {
        ++expect_kept;
        expect_origins.emplace_back(tj * t * 10.0, 960.0 - ti * t * 10.0);
      }
    }
  REQUIRE(ts.tiles.size() == expect_kept);
  for (std::size_t k = 0; k < expect_kept; ++k) {
    REQUIRE(ts.tiles[k].origin_x == expect_origins[k].first);
    REQUIRE(ts.tiles[k].origin_y == expect_origins[k].second);
  }
}

TEST_CASE("kept tiles reproduce the source pixels exactly") {
  Rng rng(89);
  const int size = 64, t = 32;
  RasterGrid img = RasterGrid::make(size, size, 3, 0.0, 640.0, 10.0);
  for (auto& band : img.bands)
    for (auto& v : band) v = static_cast<float>(rng.uniform(-2, 2));
  RasterGrid lab = checkerboard_labels(size, 8, 10.0);
  auto ts = geo::tile(img, lab, t);
  REQUIRE(ts.tiles.size() == 4);
  for (const auto& tile : ts.tiles) {
    const int c0 = static_cast<int>(tile.origin_x / 10.0);
    const int r0 = static_cast<int>((640.0 - tile.origin_y) / 10.0);
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j)
          REQUIRE(tile.image[static_cast<std::size_t>((b * t + i) * t + j)] ==
                  img.at(b, r0 + i, c0 + j));
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j)
        REQUIRE(tile.label[static_cast<std::size_t>(i * t + j)] ==
                static_cast<std::uint8_t>(lab.at(0, r0 + i, c0 + j)));
  }
}

TEST_CASE("tile rejects mismatched grid geometry") {
  RasterGrid img = RasterGrid::make(64, 64, 4, 0.0, 640.0, 10.0);
  RasterGrid lab = RasterGrid::make(64, 64, 1, 5.0, 640.0, 10.0);  // shifted origin
  REQUIRE_THROWS_AS(geo::tile(img, lab, 32), ShapeError);
}

namespace {

geo::TileSet stub_tiles(std::size_t n) {
  geo::TileSet ts;
  ts.tile_size = 1;
  ts.bands = 1;
  ts.band_names = {"b"};
  ts.tiles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ts.tiles[i].image = {static_cast<float>(i)};
    ts.tiles[i].label = {1};
  }
  return ts;
}

}  // namespace

TEST_CASE("split: 10 tiles go 7/2/1") {
  auto ts = stub_tiles(10);
  geo::split(ts, {0.70, 0.20, 0.10}, 42);
  REQUIRE(ts.indices_of(geo::Split::train).size() == 7);
  REQUIRE(ts.indices_of(geo::Split::val).size() == 2);
  REQUIRE(ts.indices_of(geo::Split::test).size() == 1);
}

TEST_CASE("split: the published tile count partitions 51487/14710/7355") {
  auto ts = stub_tiles(73552);
  geo::split(ts, {0.70, 0.20, 0.10}, 7);
  REQUIRE(ts.indices_of(geo::Split::train).size() == 51487);
  REQUIRE(ts.indices_of(geo::Split::val).size() == 14710);
  REQUIRE(ts.indices_of(geo::Split::test).size() == 7355);
}

TEST_CASE("split is seed-deterministic and seed-sensitive") {
  auto a = stub_tiles(200), b = stub_tiles(200), c = stub_tiles(200);
  geo::split(a, {0.70, 0.20, 0.10}, 5);
  geo::split(b, {0.70, 0.20, 0.10}, 5);
  geo::split(c, {0.70, 0.20, 0.10}, 6);
  bool same_ab = true, same_ac = true;
  for (std::size_t i = 0; i < 200; ++i) {
    same_ab &= a.tiles[i].split == b.tiles[i].split;
    same_ac &= a.tiles[i].split == c.tiles[i].split;
  }
  REQUIRE(same_ab);
  REQUIRE_FALSE(same_ac);
}

TEST_CASE("split validates fractions") {
  auto ts = stub_tiles(10);
  REQUIRE_THROWS_AS(geo::split(ts, {0.5, 0.2, 0.2}, 1), ValueError);
}

TEST_CASE("zscore: two-valued band maps to -1/+1") {
  geo::TileSet ts;
  ts.tile_size = 2;
  ts.bands = 1;
  ts.band_names = {"b"};
  ts.tiles.resize(1);
  ts.tiles[0].image = {0.f, 10.f, 0.f, 10.f};
  ts.tiles[0].label = {0, 0, 0, 0};
  auto stats = geo::zscore(ts);
  REQUIRE(stats.mean[0] == Catch::Approx(5.0));
  REQUIRE(stats.stddev[0] == Catch::Approx(5.0));
  REQUIRE(ts.tiles[0].image[0] == Catch::Approx(-1.f));
  REQUIRE(ts.tiles[0].image[1] == Catch::Approx(1.f));
}

TEST_CASE("zscore: random tiles normalize to mean 0, variance 1; invertible") {
  Rng rng(97);
  geo::TileSet ts;
  ts.tile_size = 8;
  ts.bands = 2;
  ts.band_names = {"a", "b"};
  ts.tiles.resize(6);
  geo::TileSet original;
  for (auto& tile : ts.tiles) {
    tile.image.resize(2 * 64);
    tile.label.assign(64, 0);
    for (auto& v : tile.image) v = static_cast<float>(rng.uniform(3.0, 9.0));
  }
  original = ts;
  auto stats = geo::zscore(ts);
  for (int b = 0; b < 2; ++b) {
    double sum = 0.0, ss = 0.0;
    std::int64_t n = 0;
    for (const auto& tile : ts.tiles) {
      for (int i = 0; i < 64; ++i) {
        const double v = tile.image[static_cast<std::size_t>(b * 64 + i)];
        sum += v;
        ++n;
      }
    }
    const double mean = sum / static_cast<double>(n);
    for (const auto& tile : ts.tiles)
      for (int i = 0; i < 64; ++i) {
        const double d = tile.image[static_cast<std::size_t>(b * 64 + i)] - mean;
        ss += d * d;
      }
    REQUIRE(std::abs(mean) < 1e-6);
    REQUIRE(std::abs(ss / static_cast<double>(n) - 1.0) < 1e-6);
  }
  // invertibility within float32
  for (std::size_t k = 0; k < ts.tiles.size(); ++k)
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 64; ++i) {
        const double z = ts.tiles[k].image[static_cast<std::size_t>(b * 64 + i)];
        const double x = stats.mean[static_cast<std::size_t>(b)] +
                         stats.stddev[static_cast<std::size_t>(b)] * z;
        REQUIRE(std::abs(x - original.tiles[k].image[static_cast<std::size_t>(b * 64 + i)]) < 1e-5);
      }
}

TEST_CASE("zscore rejects constant bands and handles nodata") {
  geo::TileSet ts;
  ts.tile_size = 2;
  ts.bands = 1;
  ts.band_names = {"b"};
  ts.tiles.resize(1);
  ts.tiles[0].image = {4.f, 4.f, 4.f, 4.f};
  ts.tiles[0].label = {0, 0, 0, 0};
  REQUIRE_THROWS_AS(geo::zscore(ts), ValueError);

  geo::TileSet ts2;
  ts2.tile_size = 2;
  ts2.bands = 1;
  ts2.band_names = {"b"};
  ts2.nodata = -9999.f;
  ts2.tiles.resize(1);
  ts2.tiles[0].image = {0.f, 10.f, -9999.f, 10.f};
  ts2.tiles[0].label = {0, 0, 0, 0};
  geo::zscore(ts2);
  REQUIRE(ts2.tiles[0].image[2] == 0.f);  // nodata pixels become 0 after normalization
}

TEST_CASE("augment identity parameters are the identity") {
  Rng rng(101);
  const int t = 16;
  std::vector<float> img(4 * t * t);
  std::vector<std::uint8_t> lab(t * t);
  for (auto& v : img) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : lab) v = static_cast<std::uint8_t>(rng.uniform_int(4));
  auto img2 = img;
  auto lab2 = lab;
  geo::apply_augment(img2, lab2, 4, t, geo::AugmentParams{});  // k=0, no flips, s=1
  REQUIRE(img2 == img);
  REQUIRE(lab2 == lab);
}

TEST_CASE("augment: 180-degree rotation twice is the identity") {
  Rng rng(103);
  const int t = 8;
  std::vector<float> img(2 * t * t);
  std::vector<std::uint8_t> lab(t * t);
  for (auto& v : img) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : lab) v = static_cast<std::uint8_t>(rng.uniform_int(4));
  auto img2 = img;
  auto lab2 = lab;
  geo::AugmentParams p;
  p.rot_quarter = 2;
  geo::apply_augment(img2, lab2, 2, t, p);
  REQUIRE(img2 != img);
  geo::apply_augment(img2, lab2, 2, t, p);
  REQUIRE(img2 == img);
  REQUIRE(lab2 == lab);
}

TEST_CASE("augment preserves the label alphabet and class identity") {
  Rng rng(107);
  const int t = 16;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> img(4 * t * t);
    std::vector<std::uint8_t> lab(t * t);
    for (auto& v : img) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : lab) v = static_cast<std::uint8_t>(rng.uniform_int(4));
    geo::augment(img, lab, 4, t, rng.next_u64());
    for (auto v : lab) REQUIRE(v <= 3);
  }
}

TEST_CASE("geometric transforms act identically on image and label indices") {
  // encode pixel identity in both carriers, transform, and compare
  const int t = 8;
  std::vector<float> img(t * t);
  std::vector<std::uint8_t> lab(t * t);
  for (int i = 0; i < t * t; ++i) {
    img[static_cast<std::size_t>(i)] = static_cast<float>(i % 4);
    lab[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i % 4);
  }
  geo::AugmentParams p;
  p.rot_quarter = 3;
  p.hflip = true;
  p.vflip = true;
  geo::apply_augment(img, lab, 1, t, p);
  for (int i = 0; i < t * t; ++i)
    REQUIRE(static_cast<std::uint8_t>(img[static_cast<std::size_t>(i)]) ==
            lab[static_cast<std::size_t>(i)]);
}

// ---- containers --------------------------------------------------------------

TEST_CASE("LDR1 round trip: float32 and uint8") {
  TempDir tmp;
  Rng rng(109);
  RasterGrid g = RasterGrid::make(7, 5, 3, 123.0, 456.0, 10.0);
  g.band_names = {"red", "green", "blue"};
  for (auto& band : g.bands)
    for (auto& v : band) v = static_cast<float>(rng.uniform(-5, 5));
  const std::string base = (tmp.path / "img").string();
  geo::write_raster(g, base);
  auto r = geo::read_raster(base);
  REQUIRE(r.same_geometry(g));
  REQUIRE(r.band_names == g.band_names);
  for (int b = 0; b < 3; ++b) REQUIRE(r.bands[static_cast<std::size_t>(b)] == g.bands[static_cast<std::size_t>(b)]);

  RasterGrid labels = checkerboard_labels(8, 2, 10.0);
  const std::string lbase = (tmp.path / "lab").string();
  geo::write_raster(labels, lbase);
  auto rl = geo::read_raster(lbase);
  REQUIRE(rl.dtype == geo::RasterDtype::uint8);
  REQUIRE(rl.bands[0] == labels.bands[0]);
}

TEST_CASE("LDR1 rejects truncated payloads and malformed headers") {
  TempDir tmp;
  RasterGrid g = RasterGrid::make(4, 4, 1, 0.0, 40.0, 10.0);
  const std::string base = (tmp.path / "x").string();
  geo::write_raster(g, base);
  fs::resize_file(base + ".bin", 7);
  REQUIRE_THROWS_AS(geo::read_raster(base), IoError);
  std::ofstream(base + ".json") << "{ not json";
  REQUIRE_THROWS_AS(geo::read_raster(base), IoError);
}

TEST_CASE("GeoJSON round trip preserves features, classes and widths") {
  TempDir tmp;
  VectorLayer layer;
  Polygon poly;
  poly.rings.push_back({{0.0, 0.0}, {30.0, 0.0}, {30.0, 30.0}, {0.0, 30.0}});
  poly.rings.push_back({{10.0, 10.0}, {20.0, 10.0}, {20.0, 20.0}, {10.0, 20.0}});
  layer.features.push_back({poly, geo::kRoad});
  layer.features.push_back({Polyline{{{0.0, 5.0}, {50.0, 7.0}, {80.0, 3.0}}, 12.5}, geo::kPipeline});
  const std::string path = (tmp.path / "layer.geojson").string();
  geo::write_geojson(layer, path);
  auto r = geo::read_geojson(path);
  REQUIRE(r.features.size() == 2);
  REQUIRE(r.features[0].class_id == geo::kRoad);
  const auto& rpoly = std::get<Polygon>(r.features[0].geometry);
  REQUIRE(rpoly.rings.size() == 2);
  REQUIRE(rpoly.rings[0].size() == 4);  // closing point stripped
  const auto& rline = std::get<Polyline>(r.features[1].geometry);
  REQUIRE(rline.width_m == 12.5);
  REQUIRE(rline.points.size() == 3);
}

TEST_CASE("GeoJSON rejects missing width_m and unknown classes") {
  TempDir tmp;
  const std::string path = (tmp.path / "bad.geojson").string();
  std::ofstream(path) << R"({"type":"FeatureCollection","features":[
    {"type":"Feature","properties":{"class":"pipeline"},
     "geometry":{"type":"LineString","coordinates":[[0,0],[1,1]]}}]})";
  REQUIRE_THROWS_AS(geo::read_geojson(path), IoError);
  std::ofstream(path) << R"({"type":"FeatureCollection","features":[
    {"type":"Feature","properties":{"class":"railway","width_m":3},
     "geometry":{"type":"LineString","coordinates":[[0,0],[1,1]]}}]})";
  REQUIRE_THROWS_AS(geo::read_geojson(path), ValueError);
}

TEST_CASE("tileset container round trips bitwise") {
  TempDir tmp;
  Rng rng(113);
  geo::TileSet ts;
  ts.tile_size = 4;
  ts.bands = 2;
  ts.band_names = {"a", "b"};
  ts.pixel_size_m = 10.0;
  ts.tiles.resize(5);
  for (auto& t : ts.tiles) {
    t.image.resize(2 * 16);
    t.label.resize(16);
    for (auto& v : t.image) v = static_cast<float>(rng.uniform(-3, 3));
    for (auto& v : t.label) v = static_cast<std::uint8_t>(rng.uniform_int(4));
    t.origin_x = rng.uniform(0, 1000);
    t.origin_y = rng.uniform(0, 1000);
  }
  geo::split(ts, {0.70, 0.20, 0.10}, 3);
  geo::zscore(ts);
  const std::string dir = (tmp.path / "tiles").string();
  geo::write_tileset(ts, dir);
  auto r = geo::read_tileset(dir);
  REQUIRE(r.tiles.size() == 5);
  REQUIRE(r.normalized);
  REQUIRE(r.stats.mean[0] == ts.stats.mean[0]);
  for (std::size_t i = 0; i < 5; ++i) {
    REQUIRE(r.tiles[i].image == ts.tiles[i].image);
    REQUIRE(r.tiles[i].label == ts.tiles[i].label);
    REQUIRE(r.tiles[i].origin_x == ts.tiles[i].origin_x);
    REQUIRE(r.tiles[i].split == ts.tiles[i].split);
  }
}

TEST_CASE("label PNG carries the palette and a valid signature") {
  TempDir tmp;
  RasterGrid labels = RasterGrid::make(4, 3, 1, 0.0, 30.0, 10.0);
  labels.at(0, 0, 0) = geo::kPipeline;
  labels.at(0, 1, 1) = geo::kRoad;
  labels.at(0, 2, 2) = geo::kCutline;
  const std::string path = (tmp.path / "labels.png").string();
  geo::write_label_png(labels, path);
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> head(8);
  is.read(reinterpret_cast<char*>(head.data()), 8);
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  REQUIRE(std::memcmp(head.data(), sig, 8) == 0);
  REQUIRE(fs::file_size(path) > 50);
  // palette: background black, pipeline yellow, road blue, cutline red
  REQUIRE(geo::label_color(0) == std::array<std::uint8_t, 3>{0, 0, 0});
  REQUIRE(geo::label_color(1) == std::array<std::uint8_t, 3>{255, 255, 0});
  REQUIRE(geo::label_color(2) == std::array<std::uint8_t, 3>{0, 0, 255});
  REQUIRE(geo::label_color(3) == std::array<std::uint8_t, 3>{255, 0, 0});
}
