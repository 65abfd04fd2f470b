#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldseg/common.hpp"
#include "ldseg/raster.hpp"

// Tiling with the coverage discard rules, the random 70/20/10 split, z-score
// normalization over the whole tile set, and the geometric augmentations.
namespace ldseg::geo {

enum class Split : std::uint8_t { none = 0, train = 1, val = 2, test = 3 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "none";
  }
}

inline Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  if (name == "none") return Split::none;
  throw ValueError("unknown split name: " + name);
}

struct Tile {
  std::vector<float> image;         // band-major [bands, T, T]
  std::vector<std::uint8_t> label;  // [T, T]
  double origin_x = 0.0, origin_y = 0.0;
  Split split = Split::none;
};

struct BandStats {
  std::array<double, 8> mean{}, stddev{};  // first `bands` entries are meaningful
};

struct TileSet {
  int tile_size = 224;
  int bands = 4;
  std::vector<std::string> band_names;
  double pixel_size_m = 10.0;
  float nodata = -9999.0f;
  bool normalized = false;
  BandStats stats;
  std::vector<Tile> tiles;

  std::vector<std::size_t> indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < tiles.size(); ++i)
      if (tiles[i].split == s) out.push_back(i);
    return out;
  }
};

/// Cuts co-registered image/label rasters into non-overlapping T x T tiles
/// from the top-left (partial edge windows dropped). A tile is kept iff at
/// least 5% of its image pixels are valid (all bands non-nodata) and at least
/// 1% of its label pixels carry a disturbance class.
inline TileSet tile(const RasterGrid& image, const RasterGrid& labels, int tile_size = 224) {
  if (!image.same_geometry(labels)) throw ShapeError("tile: image and label grids disagree");
  if (labels.band_count() != 1) throw ShapeError("tile: label raster must have one band");
  if (tile_size <= 0) throw ValueError("tile: tile size must be positive");

  TileSet ts;
  ts.tile_size = tile_size;
  ts.bands = image.band_count();
  ts.band_names = image.band_names;
  ts.pixel_size_m = image.pixel_size_m;
  ts.nodata = image.nodata;

  const int ny = image.height / tile_size;
  const int nx = image.width / tile_size;
  const std::int64_t area = static_cast<std::int64_t>(tile_size) * tile_size;
  for (int ti = 0; ti < ny; ++ti) {
    for (int tj = 0; tj < nx; ++tj) {
      const int r0 = ti * tile_size, c0 = tj * tile_size;
      std::int64_t n_valid = 0, n_dist = 0;
      for (int i = 0; i < tile_size; ++i) {
        for (int j = 0; j < tile_size; ++j) {
          if (image.valid(r0 + i, c0 + j)) ++n_valid;
          const auto lab = static_cast<std::uint8_t>(labels.at(0, r0 + i, c0 + j));
          if (lab >= 1 && lab <= 3) ++n_dist;
        }
      }
      // keep iff valid >= 5% and disturbance >= 1%, compared exactly in integers
      if (n_valid * 20 < area || n_dist * 100 < area) continue;

      Tile t;
      t.origin_x = image.origin_x + c0 * image.pixel_size_m;
      t.origin_y = image.origin_y - r0 * image.pixel_size_m;
      t.image.resize(static_cast<std::size_t>(ts.bands) * static_cast<std::size_t>(area));
      t.label.resize(static_cast<std::size_t>(area));
      for (int b = 0; b < ts.bands; ++b)
        for (int i = 0; i < tile_size; ++i)
          for (int j = 0; j < tile_size; ++j)
            t.image[(static_cast<std::size_t>(b) * static_cast<std::size_t>(tile_size) + static_cast<std::size_t>(i)) * static_cast<std::size_t>(tile_size) + static_cast<std::size_t>(j)] =
                image.at(b, r0 + i, c0 + j);
      for (int i = 0; i < tile_size; ++i)
        for (int j = 0; j < tile_size; ++j)
          t.label[static_cast<std::size_t>(i) * static_cast<std::size_t>(tile_size) + static_cast<std::size_t>(j)] =
              static_cast<std::uint8_t>(labels.at(0, r0 + i, c0 + j));
      ts.tiles.push_back(std::move(t));
    }
  }
  return ts;
}

/// Seeded shuffle-and-partition. Counts are floor(n * fraction) per split with
/// the remainder assigned to train.
inline void split(TileSet& ts, std::array<double, 3> fractions = {0.70, 0.20, 0.10},
                  std::uint64_t seed = 0) {
  double fsum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ValueError("split: fractions must be non-negative");
    fsum += f;
  }
  if (std::abs(fsum - 1.0) > 1e-9) throw ValueError("split: fractions must sum to 1");

  const auto n = static_cast<std::int64_t>(ts.tiles.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed({seed, 0x5917a3}));
  for (std::int64_t i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);

  const auto n_val = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * fractions[1]));
  const auto n_test = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * fractions[2]));
  const std::int64_t n_train = n - n_val - n_test;  // floor(n*f0) plus the remainder
  for (std::int64_t k = 0; k < n; ++k) {
    Split s = Split::train;
    if (k >= n_train && k < n_train + n_val)
      s = Split::val;
    else if (k >= n_train + n_val)
      s = Split::test;
    ts.tiles[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])].split = s;
  }
}

/// Z-score normalization in place: per-band mean/std computed over the valid
/// pixels of the entire tile set, nodata pixels set to 0 afterwards.
inline BandStats zscore(TileSet& ts) {
  if (ts.normalized) throw ValueError("zscore: tile set already normalized");
  const std::size_t area = static_cast<std::size_t>(ts.tile_size) * static_cast<std::size_t>(ts.tile_size);
  const bool nodata_nan = std::isnan(ts.nodata);
  auto is_valid = [&](float v) { return nodata_nan ? !std::isnan(v) : v != ts.nodata; };

  BandStats st;
  for (int b = 0; b < ts.bands; ++b) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& t : ts.tiles) {
      const float* p = t.image.data() + static_cast<std::size_t>(b) * area;
      for (std::size_t i = 0; i < area; ++i) {
        if (!is_valid(p[i])) continue;
        sum += p[i];
        ++count;
      }
    }
    if (count == 0) throw ValueError("zscore: band " + std::to_string(b) + " has no valid pixels");
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const auto& t : ts.tiles) {
      const float* p = t.image.data() + static_cast<std::size_t>(b) * area;
      for (std::size_t i = 0; i < area; ++i) {
        if (!is_valid(p[i])) continue;
        const double d = p[i] - mean;
        ss += d * d;
      }
    }
    const double sigma = std::sqrt(ss / static_cast<double>(count));
    if (!(sigma > 0.0)) throw ValueError("zscore: band " + std::to_string(b) + " is constant");
    st.mean[static_cast<std::size_t>(b)] = mean;
    st.stddev[static_cast<std::size_t>(b)] = sigma;
  }
  for (auto& t : ts.tiles) {
    for (int b = 0; b < ts.bands; ++b) {
      float* p = t.image.data() + static_cast<std::size_t>(b) * area;
      const auto mean = static_cast<float>(st.mean[static_cast<std::size_t>(b)]);
      const auto inv = static_cast<float>(1.0 / st.stddev[static_cast<std::size_t>(b)]);
      for (std::size_t i = 0; i < area; ++i) p[i] = is_valid(p[i]) ? (p[i] - mean) * inv : 0.f;
    }
  }
  ts.normalized = true;
  ts.stats = st;
  return st;
}

// ---------------------------------------------------------------------------
// Augmentation: quarter-turn rotation, flips, zoom crop. Image and label
// receive the identical geometric transform; labels resample nearest-neighbor
// so the class alphabet is preserved.

struct AugmentParams {
  int rot_quarter = 0;  // multiples of 90 degrees
  bool hflip = false, vflip = false;
  double scale = 1.0;          // zoom-crop scale in [0.7, 1.0]
  double off_x = 0.0, off_y = 0.0;  // crop placement in [0, 1]
};

inline AugmentParams sample_augment_params(Rng& rng) {
  AugmentParams p;
  p.rot_quarter = static_cast<int>(rng.uniform_int(4));
  p.hflip = rng.bernoulli(0.5);
  p.vflip = rng.bernoulli(0.5);
  p.scale = rng.uniform(0.7, 1.0);
  p.off_x = rng.uniform();
  p.off_y = rng.uniform();
  return p;
}

namespace detail {

template <typename T>
void remap_square(const std::vector<T>& src, std::vector<T>& dst, int t,
                  int planes, auto&& index_of_src) {
  for (int p = 0; p < planes; ++p) {
    const T* sp = src.data() + static_cast<std::size_t>(p) * static_cast<std::size_t>(t) * static_cast<std::size_t>(t);
    T* dp = dst.data() + static_cast<std::size_t>(p) * static_cast<std::size_t>(t) * static_cast<std::size_t>(t);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) dp[i * t + j] = sp[index_of_src(i, j)];
  }
}

}  // namespace detail

/// Applies the transform to a band-major image [bands,T,T] and a label [T,T].
inline void apply_augment(std::vector<float>& image, std::vector<std::uint8_t>& label, int bands,
                          int t, const AugmentParams& p) {
  const std::size_t area = static_cast<std::size_t>(t) * static_cast<std::size_t>(t);
  if (image.size() != static_cast<std::size_t>(bands) * area || label.size() != area)
    throw ShapeError("augment: buffer sizes disagree with tile size");

  std::vector<float> img_tmp(image.size());
  std::vector<std::uint8_t> lab_tmp(label.size());
  auto remap_both = [&](auto&& index_of_src) {
    detail::remap_square(image, img_tmp, t, bands, index_of_src);
    detail::remap_square(label, lab_tmp, t, 1, index_of_src);
    image.swap(img_tmp);
    label.swap(lab_tmp);
  };

  // quarter turns (clockwise)
  for (int k = 0; k < ((p.rot_quarter % 4) + 4) % 4; ++k)
    remap_both([&](int i, int j) { return (t - 1 - j) * t + i; });
  if (p.hflip) remap_both([&](int i, int j) { return i * t + (t - 1 - j); });
  if (p.vflip) remap_both([&](int i, int j) { return (t - 1 - i) * t + j; });

  // zoom crop: resample a sub-window back to full size
  const int crop = std::clamp(static_cast<int>(std::lround(p.scale * t)), 1, t);
  if (crop == t) return;
  const int max_off = t - crop;
  const int oi = std::clamp(static_cast<int>(std::lround(p.off_y * max_off)), 0, max_off);
  const int oj = std::clamp(static_cast<int>(std::lround(p.off_x * max_off)), 0, max_off);
  const double ratio = static_cast<double>(crop) / static_cast<double>(t);

  std::vector<double> src_f(static_cast<std::size_t>(t));
  std::vector<int> src_n(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    src_f[static_cast<std::size_t>(i)] = std::clamp((i + 0.5) * ratio - 0.5, 0.0, crop - 1.0);
    src_n[static_cast<std::size_t>(i)] = std::min(crop - 1, static_cast<int>(std::floor((i + 0.5) * ratio)));
  }
  for (int b = 0; b < bands; ++b) {
    const float* sp = image.data() + static_cast<std::size_t>(b) * area;
    float* dp = img_tmp.data() + static_cast<std::size_t>(b) * area;
    for (int i = 0; i < t; ++i) {
      const double fi = src_f[static_cast<std::size_t>(i)];
      const int i0 = static_cast<int>(fi), i1 = std::min(i0 + 1, crop - 1);
      const double wi = fi - i0;
      for (int j = 0; j < t; ++j) {
        const double fj = src_f[static_cast<std::size_t>(j)];
        const int j0 = static_cast<int>(fj), j1 = std::min(j0 + 1, crop - 1);
        const double wj = fj - j0;
        const double v00 = sp[(oi + i0) * t + oj + j0], v01 = sp[(oi + i0) * t + oj + j1];
        const double v10 = sp[(oi + i1) * t + oj + j0], v11 = sp[(oi + i1) * t + oj + j1];
        const double top = v00 + wj * (v01 - v00), bot = v10 + wj * (v11 - v10);
        dp[i * t + j] = static_cast<float>(top + wi * (bot - top));
      }
    }
  }
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j)
      lab_tmp[static_cast<std::size_t>(i * t + j)] =
          label[static_cast<std::size_t>((oi + src_n[static_cast<std::size_t>(i)]) * t + oj +
                                         src_n[static_cast<std::size_t>(j)])];
  image.swap(img_tmp);
  label.swap(lab_tmp);
}

/// Seeded convenience wrapper.
inline void augment(std::vector<float>& image, std::vector<std::uint8_t>& label, int bands, int t,
                    std::uint64_t seed) {
  Rng rng(seed);
  apply_augment(image, label, bands, t, sample_augment_params(rng));
}

// ---------------------------------------------------------------------------
// Tile-set container: directory with index.json + images.bin (f32) +
// labels.bin (u8), tile-major.

inline void write_tileset(const TileSet& ts, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json tiles = nlohmann::json::array();
  for (const auto& t : ts.tiles)
    tiles.push_back({{"origin_x", t.origin_x}, {"origin_y", t.origin_y}, {"split", split_name(t.split)}});
  nlohmann::json index = {
      {"tile_size", ts.tile_size},
      {"bands", ts.bands},
      {"band_names", ts.band_names},
      {"pixel_size_m", ts.pixel_size_m},
      {"nodata", ts.nodata},
      {"normalized", ts.normalized},
      {"count", ts.tiles.size()},
      {"tiles", std::move(tiles)},
  };
  if (ts.normalized) {
    index["stats"] = {
        {"mean", std::vector<double>(ts.stats.mean.begin(), ts.stats.mean.begin() + ts.bands)},
        {"stddev", std::vector<double>(ts.stats.stddev.begin(), ts.stats.stddev.begin() + ts.bands)}};
  }
  {
    std::ofstream os(fs::path(dir) / "index.json");
    if (!os) throw IoError("tileset: cannot write index: " + dir);
    os << index.dump(2) << "\n";
  }
  std::ofstream imgs(fs::path(dir) / "images.bin", std::ios::binary);
  std::ofstream labs(fs::path(dir) / "labels.bin", std::ios::binary);
  if (!imgs || !labs) throw IoError("tileset: cannot write payload: " + dir);
  for (const auto& t : ts.tiles) {
    imgs.write(reinterpret_cast<const char*>(t.image.data()),
               static_cast<std::streamsize>(t.image.size() * sizeof(float)));
    labs.write(reinterpret_cast<const char*>(t.label.data()),
               static_cast<std::streamsize>(t.label.size()));
  }
  if (!imgs || !labs) throw IoError("tileset: write failed: " + dir);
}

inline TileSet read_tileset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "index.json");
  if (!is) throw IoError("tileset: cannot open index: " + dir);
  nlohmann::json index;
  try {
    is >> index;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("tileset: malformed index in " + dir + ": " + e.what());
  }

  TileSet ts;
  try {
    ts.tile_size = index.at("tile_size").get<int>();
    ts.bands = index.at("bands").get<int>();
    ts.band_names = index.at("band_names").get<std::vector<std::string>>();
    ts.pixel_size_m = index.at("pixel_size_m").get<double>();
    ts.nodata = index.at("nodata").get<float>();
    ts.normalized = index.at("normalized").get<bool>();
    if (ts.normalized) {
      const auto mean = index.at("stats").at("mean").get<std::vector<double>>();
      const auto stddev = index.at("stats").at("stddev").get<std::vector<double>>();
      for (int b = 0; b < ts.bands; ++b) {
        ts.stats.mean[static_cast<std::size_t>(b)] = mean.at(static_cast<std::size_t>(b));
        ts.stats.stddev[static_cast<std::size_t>(b)] = stddev.at(static_cast<std::size_t>(b));
      }
    }
    const auto count = index.at("count").get<std::size_t>();
    const auto& tiles = index.at("tiles");
    if (tiles.size() != count) throw IoError("tileset: tile count mismatch in " + dir);
    ts.tiles.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      ts.tiles[i].origin_x = tiles[i].at("origin_x").get<double>();
      ts.tiles[i].origin_y = tiles[i].at("origin_y").get<double>();
      ts.tiles[i].split = split_from_name(tiles[i].at("split").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("tileset: malformed index in " + dir + ": " + e.what());
  }

  const std::size_t area = static_cast<std::size_t>(ts.tile_size) * static_cast<std::size_t>(ts.tile_size);
  std::ifstream imgs(fs::path(dir) / "images.bin", std::ios::binary);
  std::ifstream labs(fs::path(dir) / "labels.bin", std::ios::binary);
  if (!imgs || !labs) throw IoError("tileset: cannot open payload: " + dir);
  for (auto& t : ts.tiles) {
    t.image.resize(static_cast<std::size_t>(ts.bands) * area);
    t.label.resize(area);
    imgs.read(reinterpret_cast<char*>(t.image.data()),
              static_cast<std::streamsize>(t.image.size() * sizeof(float)));
    labs.read(reinterpret_cast<char*>(t.label.data()), static_cast<std::streamsize>(t.label.size()));
    if (!imgs || !labs) throw IoError("tileset: truncated payload in " + dir);
  }
  return ts;
}

}  // namespace ldseg::geo
