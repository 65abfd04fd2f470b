#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ldseg/rasterize.hpp"
#include "ldseg/tiles.hpp"

// Procedural stand-in for the satellite/footprint data: co-registered 4-band
// imagery plus exact vector ground truth, built so the qualitative difficulty
// ordering holds by construction (roads wide and bright, pipelines moderate
// with a buried fraction invisible in imagery, cutlines thin and faint).
namespace ldseg::synth {

struct SceneSpec {
  int size = 512;                     // pixels, square
  double pixel_size_m = 10.0;
  double disturbance_density = 0.10;  // background fraction ~ 1 - density
  double mix_road = 0.25, mix_pipeline = 0.17, mix_cutline = 0.58;  // of disturbance pixels
  std::array<double, 2> road_width_px{2.0, 5.0};
  std::array<double, 2> pipeline_width_px{1.0, 3.0};
  std::array<double, 2> cutline_width_px{1.0, 2.0};
  double contrast_road = 0.35, contrast_pipeline = 0.20, contrast_cutline = 0.12;
  std::array<double, 4> band_base{0.24, 0.30, 0.27, 0.45};
  double noise_amplitude = 0.05;
  int noise_octaves = 4;
  double buried_pipeline_fraction = 0.3;   // in vectors, absent from imagery
  double parallel_pipeline_fraction = 0.5; // drawn alongside a road at 1-3 px offset
  double cutline_grid_fraction = 0.5;      // drawn as seismic grid patches
  double origin_x = 0.0;
  double origin_y = 5120.0;  // defaults to size * pixel_size_m
  std::uint64_t seed = 0;

  void validate() const {
    if (size < 32) throw ValueError("scene: size must be at least 32 pixels");
    if (!(pixel_size_m > 0.0)) throw ValueError("scene: pixel size must be positive");
    if (disturbance_density < 0.0 || disturbance_density > 0.5)
      throw ValueError("scene: disturbance density must be in [0, 0.5]");
    const double mix_sum = mix_road + mix_pipeline + mix_cutline;
    if (std::abs(mix_sum - 1.0) > 1e-9) throw ValueError("scene: class mix must sum to 1");
    for (double m : {mix_road, mix_pipeline, mix_cutline})
      if (!(m > 0.0 && m < 1.0)) throw ValueError("scene: class mix fractions must be in (0,1)");
    for (const auto& w : {road_width_px, pipeline_width_px, cutline_width_px})
      if (!(w[0] > 0.0 && w[1] >= w[0])) throw ValueError("scene: bad feature width range");
    if (buried_pipeline_fraction < 0.0 || buried_pipeline_fraction > 1.0 ||
        parallel_pipeline_fraction < 0.0 || parallel_pipeline_fraction > 1.0 ||
        cutline_grid_fraction < 0.0 || cutline_grid_fraction > 1.0)
      throw ValueError("scene: fractions must be in [0, 1]");
  }
};

struct SceneData {
  geo::RasterGrid image;
  geo::VectorLayer vectors;
  std::vector<bool> rendered;  // per feature; false = buried (absent from imagery)
};

namespace detail {

inline double lattice_value(std::int64_t gx, std::int64_t gy, std::uint64_t seed) {
  std::uint64_t h = mix_seed({seed, static_cast<std::uint64_t>(gx) * 0x9e3779b97f4a7c15ULL,
                              static_cast<std::uint64_t>(gy)});
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

inline double fade(double t) { return t * t * t * (t * (6.0 * t - 15.0) + 10.0); }

/// Smooth value noise in [-1, 1] on a lattice with cells of `cell` pixels.
inline double value_noise(double px, double py, double cell, std::uint64_t seed) {
  const double sx = px / cell, sy = py / cell;
  const auto gx = static_cast<std::int64_t>(std::floor(sx));
  const auto gy = static_cast<std::int64_t>(std::floor(sy));
  const double fx = fade(sx - static_cast<double>(gx));
  const double fy = fade(sy - static_cast<double>(gy));
  const double v00 = lattice_value(gx, gy, seed), v10 = lattice_value(gx + 1, gy, seed);
  const double v01 = lattice_value(gx, gy + 1, seed), v11 = lattice_value(gx + 1, gy + 1, seed);
  const double top = v00 + fx * (v10 - v00);
  const double bot = v01 + fx * (v11 - v01);
  return top + fy * (bot - top);
}

inline double fbm(double px, double py, int octaves, std::uint64_t seed) {
  double sum = 0.0, weight = 1.0, total = 0.0, cell = 64.0;
  for (int o = 0; o < octaves; ++o) {
    sum += weight * value_noise(px, py, std::max(cell, 2.0), mix_seed({seed, static_cast<std::uint64_t>(o)}));
    total += weight;
    weight *= 0.5;
    cell *= 0.5;
  }
  return sum / total;
}

struct LinePlan {
  std::vector<geo::Point> points;  // world coordinates
  double width_m = 0.0;
};

/// A gently bent polyline between two random boundary edges, in pixel space.
inline std::vector<geo::Point> random_chord_px(Rng& rng, int size, double max_len_px) {
  const double s = static_cast<double>(size);
  auto edge_point = [&](int edge) -> geo::Point {
    const double t = rng.uniform(0.0, s);
    switch (edge & 3) {
      case 0: return {t, 0.0};
      case 1: return {t, s};
      case 2: return {0.0, t};
      default: return {s, t};
    }
  };
  const int e0 = static_cast<int>(rng.uniform_int(4));
  int e1 = static_cast<int>(rng.uniform_int(3));
  if (e1 >= e0) ++e1;
  geo::Point a = edge_point(e0), b = edge_point(e1);
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len = std::hypot(dx, dy);
  if (len > max_len_px) {  // shorten toward a, keeping direction
    const double t0 = rng.uniform(0.0, 1.0 - max_len_px / len);
    const geo::Point na{a.x + t0 * dx, a.y + t0 * dy};
    b = {na.x + dx / len * max_len_px, na.y + dy / len * max_len_px};
    a = na;
  }
  // two interior vertices with small perpendicular jitter
  const double ndx = (b.x - a.x), ndy = (b.y - a.y);
  const double nlen = std::hypot(ndx, ndy);
  const double px = -ndy / nlen, py = ndx / nlen;
  std::vector<geo::Point> pts{a};
  for (double t : {1.0 / 3.0, 2.0 / 3.0}) {
    const double jitter = rng.uniform(-0.04, 0.04) * nlen;
    pts.push_back({a.x + t * ndx + jitter * px, a.y + t * ndy + jitter * py});
  }
  pts.push_back(b);
  return pts;
}

inline std::vector<geo::Point> to_world(const std::vector<geo::Point>& px_pts,
                                        const SceneSpec& spec) {
  std::vector<geo::Point> out;
  out.reserve(px_pts.size());
  for (const auto& p : px_pts)
    out.push_back({spec.origin_x + p.x * spec.pixel_size_m, spec.origin_y - p.y * spec.pixel_size_m});
  return out;
}

/// Shifts a polyline sideways by `offset` (world units, sign picks the side).
inline std::vector<geo::Point> offset_polyline(const std::vector<geo::Point>& pts, double offset) {
  std::vector<geo::Point> out;
  out.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& a = pts[i == 0 ? 0 : i - 1];
    const auto& b = pts[i + 1 < pts.size() ? i + 1 : i];
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len = std::hypot(dx, dy);
    if (len == 0.0) {
      out.push_back(pts[i]);
      continue;
    }
    out.push_back({pts[i].x - dy / len * offset, pts[i].y + dx / len * offset});
  }
  return out;
}

/// Rasterizes one feature with the touch-any predicate and merges it into the
/// running label grid under the priority rule, returning newly claimed pixels.
inline std::int64_t merge_feature(const geo::Feature& f, const geo::RasterGrid& tmpl,
                                  std::vector<std::uint8_t>& labels) {
  geo::VectorLayer one;
  one.features.push_back(f);
  const geo::RasterGrid single = geo::rasterize_touch_any(one, tmpl);
  std::int64_t claimed = 0;
  const auto& plane = single.bands[0];
  for (std::size_t i = 0; i < plane.size(); ++i) {
    const auto v = static_cast<std::uint8_t>(plane[i]);
    if (v == geo::kBackground) continue;
    if (geo::detail::class_priority(v) > geo::detail::class_priority(labels[i])) {
      labels[i] = v;
      ++claimed;
    }
  }
  return claimed;
}

}  // namespace detail

/// Generates one scene: smooth multi-octave background, then roads, pipelines
/// and cutlines added until each class's rasterized pixel budget is met.
/// Pure function of the spec (including its seed).
inline SceneData generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(mix_seed({spec.seed, 0x5ce9e0}));
  const int size = spec.size;
  const double ps = spec.pixel_size_m;

  SceneData scene;
  scene.image = geo::RasterGrid::make(size, size, 4, spec.origin_x, spec.origin_y, ps);
  scene.image.band_names = {"red", "green", "blue", "nir"};
  for (int b = 0; b < 4; ++b) {
    const std::uint64_t band_seed = mix_seed({spec.seed, 0xba5e, static_cast<std::uint64_t>(b)});
    auto& plane = scene.image.bands[static_cast<std::size_t>(b)];
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        plane[static_cast<std::size_t>(i) * static_cast<std::size_t>(size) + static_cast<std::size_t>(j)] =
            static_cast<float>(spec.band_base[static_cast<std::size_t>(b)] +
                               spec.noise_amplitude *
                                   detail::fbm(j + 0.5, i + 0.5, spec.noise_octaves, band_seed));
  }

  const double total_budget =
      spec.disturbance_density * static_cast<double>(size) * static_cast<double>(size);
  const std::array<double, 3> budgets{total_budget * spec.mix_road,
                                      total_budget * spec.mix_pipeline,
                                      total_budget * spec.mix_cutline};
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(size) * static_cast<std::size_t>(size), 0);
  std::vector<detail::LinePlan> roads;

  auto sample_width = [&](const std::array<double, 2>& range) {
    return rng.uniform(range[0], range[1]) * ps;
  };
  auto add_feature = [&](std::vector<geo::Point> world_pts, double width_m, std::uint8_t cid,
                         bool rendered) {
    geo::Feature f{geo::Polyline{std::move(world_pts), width_m}, cid};
    const std::int64_t claimed = detail::merge_feature(f, scene.image, labels);
    scene.vectors.features.push_back(std::move(f));
    scene.rendered.push_back(rendered);
    return claimed;
  };

  // roads first (highest priority), budget-capped lengths near the end
  if (total_budget > 0.0) {
    std::int64_t count = 0;
    for (int attempts = 0; count < budgets[0] && attempts < 400; ++attempts) {
      const double width_m = sample_width(spec.road_width_px);
      const double remaining_px = budgets[0] - static_cast<double>(count);
      const double max_len = std::clamp(remaining_px / (width_m / ps) * 1.1, 60.0, 1.5 * size);
      auto pts = detail::random_chord_px(rng, size, max_len);
      detail::LinePlan plan{detail::to_world(pts, spec), width_m};
      count += add_feature(plan.points, width_m, geo::kRoad, true);
      roads.push_back(std::move(plan));
    }

    count = 0;
    for (int attempts = 0; count < budgets[1] && attempts < 400; ++attempts) {
      const double width_m = sample_width(spec.pipeline_width_px);
      const bool buried = rng.bernoulli(spec.buried_pipeline_fraction);
      std::vector<geo::Point> world_pts;
      if (!roads.empty() && rng.bernoulli(spec.parallel_pipeline_fraction)) {
        const auto& road = roads[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(roads.size())))];
        const double gap_m = rng.uniform(1.0, 3.0) * ps;
        const double offset = (road.width_m + width_m) / 2.0 + gap_m;
        world_pts = detail::offset_polyline(road.points, rng.bernoulli(0.5) ? offset : -offset);
      } else {
        const double remaining_px = budgets[1] - static_cast<double>(count);
        const double max_len = std::clamp(remaining_px / (width_m / ps) * 1.1, 50.0, 1.2 * size);
        world_pts = detail::to_world(detail::random_chord_px(rng, size, max_len), spec);
      }
      count += add_feature(std::move(world_pts), width_m, geo::kPipeline, !buried);
    }

    count = 0;
    for (int attempts = 0; count < budgets[2] && attempts < 600; ++attempts) {
      const double width_m = sample_width(spec.cutline_width_px);
      if (rng.bernoulli(spec.cutline_grid_fraction)) {
        // seismic grid patch: parallel strokes, optionally crossed
        const geo::Point center{rng.uniform(0.15, 0.85) * size, rng.uniform(0.15, 0.85) * size};
        const double theta = rng.uniform(0.0, 3.14159265358979323846);
        const double ux = std::cos(theta), uy = std::sin(theta);
        const double len = rng.uniform(100.0, 250.0);
        const double spacing = rng.uniform(18.0, 45.0);
        const auto n_par = static_cast<int>(2 + rng.uniform_int(3));
        const auto n_perp = static_cast<int>(rng.uniform_int(3));
        auto stroke = [&](double cx, double cy, double dx, double dy, double half) {
          std::vector<geo::Point> pts{{cx - dx * half, cy - dy * half}, {cx + dx * half, cy + dy * half}};
          return detail::to_world(pts, spec);
        };
        for (int k = 0; k < n_par && count < budgets[2]; ++k) {
          const double off = (k - (n_par - 1) / 2.0) * spacing;
          count += add_feature(stroke(center.x - uy * off, center.y + ux * off, ux, uy, len / 2),
                               width_m, geo::kCutline, true);
        }
        for (int k = 0; k < n_perp && count < budgets[2]; ++k) {
          const double off = (k - (n_perp - 1) / 2.0) * spacing * 1.4;
          count += add_feature(stroke(center.x + ux * off, center.y + uy * off, -uy, ux, len / 2),
                               width_m, geo::kCutline, true);
        }
      } else {
        const double remaining_px = budgets[2] - static_cast<double>(count);
        const double max_len = std::clamp(remaining_px / (width_m / ps) * 1.1, 40.0, 0.9 * size);
        count += add_feature(detail::to_world(detail::random_chord_px(rng, size, max_len), spec),
                             width_m, geo::kCutline, true);
      }
    }
  }

  // render visible features into the imagery: soft-edged additive contrast
  for (std::size_t fi = 0; fi < scene.vectors.features.size(); ++fi) {
    if (!scene.rendered[fi]) continue;
    const auto& f = scene.vectors.features[fi];
    const auto& line = std::get<geo::Polyline>(f.geometry);
    const double contrast = f.class_id == geo::kRoad        ? spec.contrast_road
                            : f.class_id == geo::kPipeline  ? spec.contrast_pipeline
                                                            : spec.contrast_cutline;
    const auto fb = geo::detail::feature_bounds(f);
    const int j0 = std::max(0, static_cast<int>(std::floor((fb.min_x - spec.origin_x) / ps)) - 1);
    const int j1 = std::min(size - 1, static_cast<int>(std::ceil((fb.max_x - spec.origin_x) / ps)) + 1);
    const int i0 = std::max(0, static_cast<int>(std::floor((spec.origin_y - fb.max_y) / ps)) - 1);
    const int i1 = std::min(size - 1, static_cast<int>(std::ceil((spec.origin_y - fb.min_y) / ps)) + 1);
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const geo::Point c{scene.image.center_x(j), scene.image.center_y(i)};
        const double dist = geo::detail::point_polyline_dist(c, line.points);
        const double cov = std::clamp((line.width_m / 2.0 + 0.35 * ps - dist) / (0.7 * ps), 0.0, 1.0);
        if (cov <= 0.0) continue;
        for (int b = 0; b < 4; ++b)
          scene.image.at(b, i, j) += static_cast<float>(contrast * cov);
      }
    }
  }
  return scene;
}

/// Scenes laid out on a world grid, rasterized touch-any, tiled and split.
inline geo::TileSet generate_dataset(int n_scenes, const SceneSpec& base, std::uint64_t seed,
                                     int tile_size, std::array<double, 3> fractions = {0.70, 0.20, 0.10}) {
  if (n_scenes < 1) throw ValueError("dataset: need at least one scene");
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_scenes))));
  const double extent = base.size * base.pixel_size_m;

  geo::TileSet all;
  bool first = true;
  for (int s = 0; s < n_scenes; ++s) {
    SceneSpec spec = base;
    spec.seed = mix_seed({seed, 0x5ce0e5, static_cast<std::uint64_t>(s)});
    spec.origin_x = static_cast<double>(s % cols) * extent;
    spec.origin_y = extent - static_cast<double>(s / cols) * extent;
    const SceneData scene = generate_scene(spec);
    const geo::RasterGrid labels = geo::rasterize_touch_any(scene.vectors, scene.image);
    geo::TileSet ts = geo::tile(scene.image, labels, tile_size);
    if (first) {
      all = std::move(ts);
      first = false;
    } else {
      for (auto& t : ts.tiles) all.tiles.push_back(std::move(t));
    }
  }
  geo::split(all, fractions, mix_seed({seed, 0x59117}));
  return all;
}

}  // namespace ldseg::synth
