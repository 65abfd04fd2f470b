#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "ldseg/tensor.hpp"

// Evaluation suite: 4x4 confusion accumulation, per-class precision / recall /
// F1 / IoU with explicit undefined handling, macro and support-weighted
// averages, row/column normalization, and spatially gridded per-region scores.
namespace ldseg::metrics {

inline constexpr int kNumClasses = 4;

/// Rows = true class, columns = predicted class.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
      for (std::uint64_t v : row) n += v;
    return n;
  }

  std::uint64_t tp(int c) const { return counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]; }
  std::uint64_t support(int c) const {
    std::uint64_t n = 0;
    for (int p = 0; p < kNumClasses; ++p) n += counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(p)];
    return n;
  }
  std::uint64_t predicted(int c) const {
    std::uint64_t n = 0;
    for (int t = 0; t < kNumClasses; ++t) n += counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
    return n;
  }

  void merge(const ConfusionMatrix& other) {
    for (int t = 0; t < kNumClasses; ++t)
      for (int p = 0; p < kNumClasses; ++p)
        counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] +=
            other.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
};

/// Adds one truth/prediction label-map pair into the matrix.
inline void accumulate(ConfusionMatrix& cm, const Tensor<std::uint8_t>& truth,
                       const Tensor<std::uint8_t>& pred) {
  if (!truth.same_shape(pred)) throw ShapeError("confusion: truth and prediction shapes disagree");
  for (std::int64_t i = 0; i < truth.numel(); ++i) {
    const std::uint8_t t = truth[i], p = pred[i];
    if (t >= kNumClasses || p >= kNumClasses) throw ValueError("confusion: label out of range 0..3");
    ++cm.counts[t][p];
  }
}

/// A per-class score; nullopt means the defining ratio was 0/0.
using Score = std::optional<double>;

struct PerClassMetrics {
  std::array<Score, kNumClasses> precision, recall, f1, iou;
  std::array<std::uint64_t, kNumClasses> support;
  std::array<double, kNumClasses> pixel_proportion;  // support / total
};

inline PerClassMetrics per_class_metrics(const ConfusionMatrix& cm) {
  PerClassMetrics m{};
  const double total = static_cast<double>(cm.total());
  for (int c = 0; c < kNumClasses; ++c) {
    const auto i = static_cast<std::size_t>(c);
    const std::uint64_t tp = cm.tp(c);
    const std::uint64_t fp = cm.predicted(c) - tp;
    const std::uint64_t fn = cm.support(c) - tp;
    m.support[i] = cm.support(c);
    m.pixel_proportion[i] = total > 0 ? static_cast<double>(m.support[i]) / total : 0.0;
    m.precision[i] = (tp + fp) ? Score(static_cast<double>(tp) / static_cast<double>(tp + fp)) : std::nullopt;
    m.recall[i] = (tp + fn) ? Score(static_cast<double>(tp) / static_cast<double>(tp + fn)) : std::nullopt;
    m.f1[i] = (2 * tp + fp + fn)
                  ? Score(2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn))
                  : std::nullopt;
    m.iou[i] = (tp + fp + fn)
                   ? Score(static_cast<double>(tp) / static_cast<double>(tp + fp + fn))
                   : std::nullopt;
  }
  return m;
}

// Algebraic identities used for verification against published (P, R) pairs.
inline double f1_from_pr(double p, double r) { return 2.0 * p * r / (p + r); }
inline double iou_from_pr(double p, double r) { return p * r / (p + r - p * r); }
inline double f1_from_iou(double iou) { return 2.0 * iou / (1.0 + iou); }

enum class UndefinedPolicy {
  skip,  // average only the defined classes (default)
  fail,  // throw if any class is undefined
};

/// Unweighted mean over the four classes. Classes whose score is undefined
/// (no support and no predictions) are skipped or rejected per policy.
inline Score macro_average(const std::array<Score, kNumClasses>& values,
                           UndefinedPolicy policy = UndefinedPolicy::skip) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : values) {
    if (!v.has_value()) {
      if (policy == UndefinedPolicy::fail) throw ValueError("macro average: undefined class metric");
      continue;
    }
    sum += *v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

/// Support-weighted mean: sum of p_c * M_c (no 1/4 factor). Undefined classes
/// are allowed only with zero proportion.
inline Score weighted_average(const std::array<Score, kNumClasses>& values,
                              const std::array<double, kNumClasses>& proportions) {
  double psum = 0.0;
  for (double p : proportions) psum += p;
  if (std::abs(psum - 1.0) > 1e-9) throw ValueError("weighted average: proportions must sum to 1");
  double out = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto i = static_cast<std::size_t>(c);
    if (!values[i].has_value()) {
      if (proportions[i] > 0.0) return std::nullopt;
      continue;
    }
    out += proportions[i] * *values[i];
  }
  return out;
}

enum class Axis { rows, columns };

struct NormalizedConfusion {
  std::array<std::array<double, kNumClasses>, kNumClasses> values{};
  std::array<bool, kNumClasses> defined{};  // per row (or column)
};

/// Row normalization puts recall on the diagonal; column normalization puts
/// precision there. All-zero rows/columns stay zero and are flagged undefined.
inline NormalizedConfusion normalize(const ConfusionMatrix& cm, Axis axis) {
  NormalizedConfusion out{};
  for (int k = 0; k < kNumClasses; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const std::uint64_t denom = axis == Axis::rows ? cm.support(k) : cm.predicted(k);
    out.defined[i] = denom != 0;
    if (!denom) continue;
    for (int o = 0; o < kNumClasses; ++o) {
      const auto j = static_cast<std::size_t>(o);
      const std::uint64_t v = axis == Axis::rows ? cm.counts[i][j] : cm.counts[j][i];
      const double norm = static_cast<double>(v) / static_cast<double>(denom);
      if (axis == Axis::rows)
        out.values[i][j] = norm;
      else
        out.values[j][i] = norm;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatially gridded evaluation (per-sub-region IoU over test tiles).

struct EvaluatedTile {
  double origin_x = 0.0, origin_y = 0.0;  // world coordinates of the tile's top-left corner
  ConfusionMatrix cm;
};

struct BoundingBox {
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
};

struct GridCell {
  ConfusionMatrix cm;
  std::int64_t n_tiles = 0;
  std::array<Score, kNumClasses> iou{};
  std::array<bool, kNumClasses> no_support{};  // true when the cell has no truth pixels of the class
  Score macro_iou;
};

struct SpatialGrid {
  BoundingBox bbox;
  int rows = 0, cols = 0;
  std::vector<GridCell> cells;  // row-major, row 0 at the top (max_y edge)

  GridCell& cell(int r, int c) { return cells[static_cast<std::size_t>(r * cols + c)]; }
  const GridCell& cell(int r, int c) const { return cells[static_cast<std::size_t>(r * cols + c)]; }
};

/// Buckets evaluated tiles into an R x C grid over the bounding box by their
/// origin coordinate and derives per-cell metrics. Cells lacking truth pixels
/// of a class are flagged (the "no support" outline semantics).
inline SpatialGrid spatial_miou(const std::vector<EvaluatedTile>& tiles, const BoundingBox& bbox,
                                int grid_rows, int grid_cols,
                                UndefinedPolicy policy = UndefinedPolicy::skip) {
  if (grid_rows < 1 || grid_cols < 1) throw ValueError("spatial grid: dimensions must be positive");
  if (!(bbox.max_x > bbox.min_x) || !(bbox.max_y > bbox.min_y))
    throw ValueError("spatial grid: empty bounding box");

  SpatialGrid grid;
  grid.bbox = bbox;
  grid.rows = grid_rows;
  grid.cols = grid_cols;
  grid.cells.resize(static_cast<std::size_t>(grid_rows) * static_cast<std::size_t>(grid_cols));

  const double cell_w = (bbox.max_x - bbox.min_x) / grid_cols;
  const double cell_h = (bbox.max_y - bbox.min_y) / grid_rows;
  for (const auto& tile : tiles) {
    if (tile.origin_x < bbox.min_x || tile.origin_x > bbox.max_x || tile.origin_y < bbox.min_y ||
        tile.origin_y > bbox.max_y)
      throw ValueError("spatial grid: tile origin outside the bounding box");
    int c = static_cast<int>((tile.origin_x - bbox.min_x) / cell_w);
    int r = static_cast<int>((bbox.max_y - tile.origin_y) / cell_h);
    c = std::min(c, grid_cols - 1);
    r = std::min(r, grid_rows - 1);
    auto& cell = grid.cell(r, c);
    cell.cm.merge(tile.cm);
    ++cell.n_tiles;
  }
  for (auto& cell : grid.cells) {
    const auto m = per_class_metrics(cell.cm);
    cell.iou = m.iou;
    for (int c = 0; c < kNumClasses; ++c)
      cell.no_support[static_cast<std::size_t>(c)] = cell.cm.support(c) == 0;
    cell.macro_iou = cell.n_tiles ? macro_average(m.iou, policy) : Score{};
  }
  return grid;
}

}  // namespace ldseg::metrics
