#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "ldseg/common.hpp"
#include "ldseg/raster.hpp"
#include "ldseg/vector_layer.hpp"

namespace ldseg::geo {

/// Fixed label palette: background black, pipeline yellow, road blue,
/// cutline red.
inline std::array<std::uint8_t, 3> label_color(std::uint8_t label) {
  switch (label) {
    case kPipeline: return {255, 255, 0};
    case kRoad: return {0, 0, 255};
    case kCutline: return {255, 0, 0};
    default: return {0, 0, 0};
  }
}

namespace detail {

inline void png_chunk(std::ostream& os, const char type[4], const std::uint8_t* data,
                      std::uint32_t len) {
  auto write_be32 = [&os](std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  write_be32(len);
  os.write(type, 4);
  if (len) os.write(reinterpret_cast<const char*>(data), len);
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (len) crc = crc32(crc, data, len);
  write_be32(crc);
}

}  // namespace detail

/// Writes an 8-bit RGB PNG (color type 2, no interlace).
inline void write_png_rgb(const std::string& path, int width, int height,
                          const std::vector<std::uint8_t>& rgb) {
  if (width <= 0 || height <= 0 ||
      rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
    throw ShapeError("png: buffer size does not match dimensions");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("png: cannot write: " + path);
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::uint8_t ihdr[13];
  auto put_be32 = [](std::uint8_t* p, std::uint32_t v) {
    p[0] = static_cast<std::uint8_t>(v >> 24);
    p[1] = static_cast<std::uint8_t>(v >> 16);
    p[2] = static_cast<std::uint8_t>(v >> 8);
    p[3] = static_cast<std::uint8_t>(v);
  };
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr + 4, static_cast<std::uint32_t>(height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // RGB
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_chunk(os, "IHDR", ihdr, 13);

  // filter byte 0 per scanline, then one zlib stream
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (static_cast<std::size_t>(width) * 3 + 1));
  for (int i = 0; i < height; ++i) {
    std::uint8_t* row = raw.data() + static_cast<std::size_t>(i) * (static_cast<std::size_t>(width) * 3 + 1);
    row[0] = 0;
    std::memcpy(row + 1, rgb.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(width) * 3,
                static_cast<std::size_t>(width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png: deflate failed: " + path);
  detail::png_chunk(os, "IDAT", compressed.data(), static_cast<std::uint32_t>(bound));
  detail::png_chunk(os, "IEND", nullptr, 0);
  if (!os) throw IoError("png: write failed: " + path);
}

/// Renders a single-band label raster with the fixed class palette.
inline void write_label_png(const RasterGrid& labels, const std::string& path) {
  if (labels.band_count() != 1) throw ShapeError("png: label raster must have one band");
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(labels.width) * static_cast<std::size_t>(labels.height) * 3);
  for (int i = 0; i < labels.height; ++i) {
    for (int j = 0; j < labels.width; ++j) {
      const auto color = label_color(static_cast<std::uint8_t>(labels.at(0, i, j)));
      const std::size_t off = (static_cast<std::size_t>(i) * static_cast<std::size_t>(labels.width) + static_cast<std::size_t>(j)) * 3;
      rgb[off] = color[0];
      rgb[off + 1] = color[1];
      rgb[off + 2] = color[2];
    }
  }
  write_png_rgb(path, labels.width, labels.height, rgb);
}

}  // namespace ldseg::geo
