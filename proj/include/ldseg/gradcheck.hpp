#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ldseg/common.hpp"

namespace ldseg::nn {

/// One differentiable buffer to verify: the live values (perturbed in place),
/// the analytic gradient captured beforehand, and a label for reporting.
struct GradCheckItem {
  double* values = nullptr;
  const double* analytic = nullptr;
  std::int64_t size = 0;
  std::string name;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_item;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped_nonsmooth = 0;  // coordinates straddling a ReLU/argmax kink
};

/// Central-difference verification of analytic gradients, intended to run in
/// float64. Samples up to `samples_per_item` coordinates of each item,
/// recomputes the loss at +/- h, and reports the maximum of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12). Coordinates where
/// the two agree within `abs_tol` count as exact: a true-zero gradient (e.g. a
/// conv bias feeding batch norm) otherwise pits rounding noise against
/// finite-difference noise and the ratio is meaningless.
///
/// Central differences are only a valid oracle where the loss is locally
/// smooth. When the one-sided slopes disagree (the interval straddles a ReLU
/// or pool-argmax kink, or curvature dominates), the step shrinks and the
/// coordinate is re-probed; a coordinate that never becomes smooth is skipped
/// (counted in skipped_nonsmooth) rather than misreported.
inline GradCheckReport grad_check(const std::function<double()>& loss,
                                  std::span<GradCheckItem> items,
                                  std::int64_t samples_per_item = 8, double h = 1e-5,
                                  std::uint64_t seed = 0, double abs_tol = 5e-9) {
  GradCheckReport report;
  Rng rng(mix_seed({seed, 0x9c6dc4e1}));
  for (const auto& item : items) {
    std::vector<std::int64_t> coords;
    if (item.size <= samples_per_item) {
      coords.resize(static_cast<std::size_t>(item.size));
      for (std::int64_t i = 0; i < item.size; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      for (std::int64_t s = 0; s < samples_per_item; ++s)
        coords.push_back(rng.uniform_int(item.size));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (std::int64_t idx : coords) {
      const double saved = item.values[idx];
      const double l0 = loss();
      double numeric = 0.0;
      bool smooth = false;
      for (double step = h; step >= h / 16.0 - 1e-300; step /= 4.0) {
        item.values[idx] = saved + step;
        const double lp = loss();
        item.values[idx] = saved - step;
        const double lm = loss();
        item.values[idx] = saved;
        const double d_right = (lp - l0) / step;
        const double d_left = (l0 - lm) / step;
        if (std::abs(d_right - d_left) <=
            std::max(1e-8, 2e-4 * std::max(std::abs(d_right), std::abs(d_left)))) {
          numeric = (lp - lm) / (2.0 * step);
          smooth = true;
          break;
        }
      }
      if (!smooth) {
        ++report.skipped_nonsmooth;
        continue;
      }
      const double analytic = item.analytic[idx];
      const double diff = std::abs(analytic - numeric);
      const double rel =
          diff <= abs_tol ? 0.0 : diff / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_item = item.name;
        report.worst_index = idx;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace ldseg::nn
