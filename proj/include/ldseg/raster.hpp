#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldseg/common.hpp"

namespace ldseg::geo {

enum class RasterDtype { float32, uint8 };

/// Georeferenced multi-band pixel grid. Pixel (row i, col j) covers the world
/// rectangle [origin_x + j*ps, origin_x + (j+1)*ps] x
/// [origin_y - (i+1)*ps, origin_y - i*ps]; the origin is the top-left corner.
struct RasterGrid {
  int width = 0, height = 0;
  std::vector<std::string> band_names;
  double origin_x = 0.0, origin_y = 0.0;
  double pixel_size_m = 10.0;
  float nodata = -9999.0f;
  RasterDtype dtype = RasterDtype::float32;
  std::string crs_note = "co-registered local grid";
  std::vector<std::vector<float>> bands;  // per-band row-major planes

  int band_count() const { return static_cast<int>(bands.size()); }

  static RasterGrid make(int width, int height, int n_bands, double origin_x, double origin_y,
                         double pixel_size_m) {
    if (width <= 0 || height <= 0 || n_bands <= 0)
      throw ShapeError("raster: dimensions must be positive");
    RasterGrid g;
    g.width = width;
    g.height = height;
    g.origin_x = origin_x;
    g.origin_y = origin_y;
    g.pixel_size_m = pixel_size_m;
    g.bands.assign(static_cast<std::size_t>(n_bands),
                   std::vector<float>(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0.f));
    for (int b = 0; b < n_bands; ++b) g.band_names.push_back("band_" + std::to_string(b + 1));
    return g;
  }

  float& at(int band, int i, int j) {
    return bands[static_cast<std::size_t>(band)][static_cast<std::size_t>(i) * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)];
  }
  float at(int band, int i, int j) const { return const_cast<RasterGrid&>(*this).at(band, i, j); }

  bool same_geometry(const RasterGrid& other) const {
    return width == other.width && height == other.height && origin_x == other.origin_x &&
           origin_y == other.origin_y && pixel_size_m == other.pixel_size_m;
  }

  /// World coordinate of the center of pixel (i, j).
  double center_x(int j) const { return origin_x + (j + 0.5) * pixel_size_m; }
  double center_y(int i) const { return origin_y - (i + 0.5) * pixel_size_m; }

  /// True if no band carries the nodata sentinel at (i, j).
  bool valid(int i, int j) const {
    for (const auto& band : bands) {
      const float v = band[static_cast<std::size_t>(i) * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)];
      if (std::isnan(nodata) ? std::isnan(v) : v == nodata) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// "LDR1" container: <path>.json UTF-8 header + <path>.bin planar band-major
// little-endian payload.

inline void write_raster(const RasterGrid& g, const std::string& path) {
  nlohmann::json header = {
      {"width", g.width},
      {"height", g.height},
      {"bands", g.band_count()},
      {"band_names", g.band_names},
      {"dtype", g.dtype == RasterDtype::float32 ? "float32" : "uint8"},
      {"origin_x", g.origin_x},
      {"origin_y", g.origin_y},
      {"pixel_size_m", g.pixel_size_m},
      {"nodata", g.nodata},
      {"crs_note", g.crs_note},
  };
  {
    std::ofstream os(path + ".json");
    if (!os) throw IoError("raster: cannot write header: " + path + ".json");
    os << header.dump(2) << "\n";
  }
  std::ofstream os(path + ".bin", std::ios::binary);
  if (!os) throw IoError("raster: cannot write payload: " + path + ".bin");
  for (const auto& band : g.bands) {
    if (g.dtype == RasterDtype::float32) {
      os.write(reinterpret_cast<const char*>(band.data()),
               static_cast<std::streamsize>(band.size() * sizeof(float)));
    } else {
      std::vector<std::uint8_t> row(band.size());
      for (std::size_t i = 0; i < band.size(); ++i) row[i] = static_cast<std::uint8_t>(band[i]);
      os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
  }
  if (!os) throw IoError("raster: write failed: " + path + ".bin");
}

inline RasterGrid read_raster(const std::string& path) {
  std::ifstream hs(path + ".json");
  if (!hs) throw IoError("raster: cannot open header: " + path + ".json");
  nlohmann::json header;
  try {
    hs >> header;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("raster: malformed header " + path + ".json: " + e.what());
  }

  RasterGrid g;
  try {
    g.width = header.at("width").get<int>();
    g.height = header.at("height").get<int>();
    const int n_bands = header.at("bands").get<int>();
    g.band_names = header.at("band_names").get<std::vector<std::string>>();
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype == "float32")
      g.dtype = RasterDtype::float32;
    else if (dtype == "uint8")
      g.dtype = RasterDtype::uint8;
    else
      throw IoError("raster: unsupported dtype: " + dtype);
    g.origin_x = header.at("origin_x").get<double>();
    g.origin_y = header.at("origin_y").get<double>();
    g.pixel_size_m = header.at("pixel_size_m").get<double>();
    g.nodata = header.at("nodata").get<float>();
    g.crs_note = header.value("crs_note", std::string());
    if (g.width <= 0 || g.height <= 0 || n_bands <= 0 ||
        n_bands != static_cast<int>(g.band_names.size()))
      throw IoError("raster: inconsistent header: " + path + ".json");
    g.bands.assign(static_cast<std::size_t>(n_bands),
                   std::vector<float>(static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("raster: malformed header " + path + ".json: " + e.what());
  }

  std::ifstream is(path + ".bin", std::ios::binary);
  if (!is) throw IoError("raster: cannot open payload: " + path + ".bin");
  const std::size_t plane = static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height);
  for (auto& band : g.bands) {
    if (g.dtype == RasterDtype::float32) {
      is.read(reinterpret_cast<char*>(band.data()), static_cast<std::streamsize>(plane * sizeof(float)));
    } else {
      std::vector<std::uint8_t> raw(plane);
      is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(plane));
      for (std::size_t i = 0; i < plane; ++i) band[i] = raw[i];
    }
    if (!is) throw IoError("raster: truncated payload: " + path + ".bin");
  }
  return g;
}

}  // namespace ldseg::geo
