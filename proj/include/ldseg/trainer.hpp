#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "ldseg/loss.hpp"
#include "ldseg/metrics.hpp"
#include "ldseg/model.hpp"
#include "ldseg/tiles.hpp"

// Training protocol: seeded shuffling, augmentation on train batches, Adam,
// per-epoch validation macro mIoU, and the two-phase learning-rate schedule
// with patience-triggered phase advance / early stop.
namespace ldseg::train {

struct PhaseConfig {
  int epochs = 100;
  double lr = 1e-3;
};

struct TrainConfig {
  int batch_size = 4;
  PhaseConfig phase1{100, 1e-3};
  PhaseConfig phase2{100, 1e-4};
  int patience = 15;
  double improve_eps = 1e-6;  // minimum increase that counts as improvement
  loss::ClassWeights weights;
  std::uint64_t seed = 0;
  bool augment = true;

  void validate() const {
    if (batch_size < 1) throw ValueError("train: batch size must be at least 1");
    if (!(phase1.lr > 0.0) || !(phase2.lr > 0.0)) throw ValueError("train: learning rates must be positive");
    if (phase1.epochs < 0 || phase2.epochs < 0) throw ValueError("train: epoch counts must be non-negative");
    if (patience < 1) throw ValueError("train: patience must be at least 1");
    weights.validate();
  }
};

/// Patience state machine: a plateau of `patience` consecutive non-improving
/// epochs advances phase 1 -> 2, then stops. Any strict improvement (by at
/// least improve_eps) resets the counter. Drives the training loop and is
/// directly testable with scripted validation curves.
class EarlyStopMachine {
 public:
  EarlyStopMachine(int patience, double improve_eps) : patience_(patience), eps_(improve_eps) {}

  struct Outcome {
    bool improved = false;
    bool advanced_phase = false;
    bool stopped = false;
  };

  Outcome feed(double val_metric) {
    if (stopped_) throw ValueError("early stop: already stopped");
    Outcome out;
    if (val_metric > best_ + eps_) {
      best_ = val_metric;
      counter_ = 0;
      out.improved = true;
      return out;
    }
    if (++counter_ >= patience_) {
      if (phase_ == 1) {
        phase_ = 2;
        counter_ = 0;
        out.advanced_phase = true;
      } else {
        stopped_ = true;
        out.stopped = true;
      }
    }
    return out;
  }

  /// Epoch-cap transition (phase 1 budget exhausted without a plateau).
  void force_advance() {
    if (phase_ == 1) {
      phase_ = 2;
      counter_ = 0;
    }
  }

  int phase() const { return phase_; }
  bool stopped() const { return stopped_; }
  double best() const { return best_; }

 private:
  int patience_;
  double eps_;
  int phase_ = 1;
  int counter_ = 0;
  bool stopped_ = false;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  int epoch = 0;  // zero-based, global
  int phase = 1;
  double train_loss = 0.0;
  double val_miou = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  int best_epoch = -1;
  double best_val_miou = 0.0;
};

struct TrainResult {
  net::SegmentationModel<float> best_model;
  TrainHistory history;
  bool aborted_nonfinite = false;
};

namespace detail {

struct Batch {
  Tensor<float> images;        // [B,4,T,T]
  Tensor<std::uint8_t> labels;  // [B,T,T]
};

inline Batch make_batch(const geo::TileSet& ts, const std::vector<std::size_t>& idx,
                        std::size_t first, std::size_t count, bool augment,
                        std::uint64_t aug_seed_base) {
  const int t = ts.tile_size, bands = ts.bands;
  Batch batch{Tensor<float>({static_cast<std::int64_t>(count), bands, t, t}),
              Tensor<std::uint8_t>({static_cast<std::int64_t>(count), t, t})};
  const std::size_t area = static_cast<std::size_t>(t) * static_cast<std::size_t>(t);
  for (std::size_t b = 0; b < count; ++b) {
    const auto& tile = ts.tiles[idx[first + b]];
    std::vector<float> img = tile.image;
    std::vector<std::uint8_t> lab = tile.label;
    if (augment)
      geo::augment(img, lab, bands, t, mix_seed({aug_seed_base, static_cast<std::uint64_t>(idx[first + b])}));
    std::copy(img.begin(), img.end(), batch.images.data() + static_cast<std::int64_t>(b * img.size()));
    std::copy(lab.begin(), lab.end(), batch.labels.data() + static_cast<std::int64_t>(b * area));
  }
  return batch;
}

}  // namespace detail

/// Confusion-based macro mIoU of an arbitrary predictor over one split, using
/// one globally accumulated confusion matrix (never per-tile averaging).
inline double validate_with(
    const std::function<Tensor<std::uint8_t>(const Tensor<float>&)>& predict,
    const geo::TileSet& ts, geo::Split split, int batch_size = 4) {
  const auto idx = ts.indices_of(split);
  if (idx.empty()) throw ValueError("validate: split is empty");
  metrics::ConfusionMatrix cm;
  for (std::size_t first = 0; first < idx.size(); first += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch_size), idx.size() - first);
    auto batch = detail::make_batch(ts, idx, first, count, false, 0);
    metrics::accumulate(cm, batch.labels, predict(batch.images));
  }
  return metrics::macro_average(metrics::per_class_metrics(cm).iou).value_or(0.0);
}

/// Eval-mode validation macro mIoU; leaves the model's mode as it found it
/// and never touches parameters or running statistics.
inline double validate(net::SegmentationModel<float>& model, const geo::TileSet& ts,
                       geo::Split split, int batch_size = 4) {
  const nn::BnMode saved = model.mode();
  model.set_mode(nn::BnMode::eval);
  const double miou = validate_with(
      [&model](const Tensor<float>& x) { return net::predict_labels(model.forward(x)); }, ts,
      split, batch_size);
  model.set_mode(saved);
  return miou;
}

/// Runs the full two-phase protocol and returns the checkpoint of the epoch
/// with the highest validation macro mIoU, plus the per-epoch history.
/// A non-finite training loss aborts, retaining the last good checkpoint.
inline TrainResult train(net::SegmentationModel<float>& model, const geo::TileSet& tiles,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (!tiles.normalized) throw ValueError("train: tile set must be z-score normalized");
  if (tiles.tile_size != model.spec().input_size)
    throw ShapeError("train: tile size does not match the model input size");
  const auto train_idx_all = tiles.indices_of(geo::Split::train);
  if (train_idx_all.empty()) throw ValueError("train: train split is empty");
  if (tiles.indices_of(geo::Split::val).empty()) throw ValueError("train: validation split is empty");

  std::vector<nn::AdamState<float>> states;
  auto params = model.parameters();
  states.reserve(params.size());
  for (auto* p : params) states.emplace_back(p->value.shape());

  TrainResult result{model, {}, false};  // fallback checkpoint: initial weights
  EarlyStopMachine machine(cfg.patience, cfg.improve_eps);
  double best_miou = -std::numeric_limits<double>::infinity();
  int epochs_in_phase2 = 0;

  for (int epoch = 0;; ++epoch) {
    if (machine.phase() == 1 && epoch >= cfg.phase1.epochs) machine.force_advance();
    if (machine.phase() == 2 && epochs_in_phase2 >= cfg.phase2.epochs) break;
    const int phase = machine.phase();
    const double lr = phase == 1 ? cfg.phase1.lr : cfg.phase2.lr;
    const auto t0 = std::chrono::steady_clock::now();

    // seeded per-epoch shuffle
    std::vector<std::size_t> order = train_idx_all;
    Rng shuffle_rng(mix_seed({cfg.seed, 0xe70c, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<std::int64_t>(i + 1)))]);

    model.set_mode(nn::BnMode::train);
    const std::uint64_t aug_base = mix_seed({cfg.seed, 0xa06, static_cast<std::uint64_t>(epoch)});
    double loss_sum = 0.0;
    std::int64_t n_batches = 0;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t first = 0; first + bs <= order.size(); first += bs) {
      auto batch = detail::make_batch(tiles, order, first, bs, cfg.augment, aug_base);
      const auto y = loss::one_hot<float>(batch.labels);
      model.zero_grads();
      const Tensor<float> logits = model.forward(batch.images);
      auto composite = loss::composite_loss(y, logits, cfg.weights);
      if (!std::isfinite(composite.total)) {
        result.aborted_nonfinite = true;
        return result;
      }
      model.backward(composite.grad_logits);
      for (std::size_t p = 0; p < params.size(); ++p) nn::adam_step(*params[p], states[p], lr);
      loss_sum += composite.total;
      ++n_batches;
    }
    if (phase == 2) ++epochs_in_phase2;

    const double val_miou = validate(model, tiles, geo::Split::val, cfg.batch_size);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.records.push_back({epoch, phase, n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0,
                                      val_miou, lr, seconds});
    if (val_miou > best_miou) {  // pure argmax, first occurrence wins
      best_miou = val_miou;
      result.history.best_epoch = epoch;
      result.history.best_val_miou = val_miou;
      result.best_model = model;
      result.best_model.drop_caches();
    }
    if (machine.feed(val_miou).stopped) break;
  }
  result.best_model.set_mode(nn::BnMode::eval);
  return result;
}

/// Writes the per-epoch history CSV. In reproducibility mode the wall-time
/// column is written as 0 so that identical runs produce identical files.
inline void write_history_csv(const TrainHistory& history, const std::string& path,
                              bool zero_seconds = false) {
  std::ofstream os(path);
  if (!os) throw IoError("history: cannot write: " + path);
  os << "epoch,phase,loss,val_miou,lr,seconds\n";
  char line[192];
  for (const auto& r : history.records) {
    std::snprintf(line, sizeof(line), "%d,%d,%.9g,%.9g,%.9g,%.3f\n", r.epoch, r.phase,
                  r.train_loss, r.val_miou, r.lr, zero_seconds ? 0.0 : r.seconds);
    os << line;
  }
  if (!os) throw IoError("history: write failed: " + path);
}

/// Z-scores the raster with the provided statistics, tiles it (zero-padded at
/// the edges), runs eval-mode prediction per tile and stitches the argmax
/// labels. Pixels invalid in the input come back as background.
inline geo::RasterGrid predict_raster(net::SegmentationModel<float>& model,
                                      const geo::RasterGrid& image, const geo::BandStats& stats) {
  if (image.band_count() != model.spec().in_channels)
    throw ShapeError("predict: raster band count does not match the model");
  const int t = model.spec().input_size;
  const int h = image.height, w = image.width;
  const nn::BnMode saved = model.mode();
  model.set_mode(nn::BnMode::eval);

  geo::RasterGrid out = geo::RasterGrid::make(w, h, 1, image.origin_x, image.origin_y,
                                              image.pixel_size_m);
  out.band_names = {"label"};
  out.dtype = geo::RasterDtype::uint8;
  out.nodata = 255.0f;

  const bool nodata_nan = std::isnan(image.nodata);
  auto is_valid = [&](float v) { return nodata_nan ? !std::isnan(v) : v != image.nodata; };
  const int bands = image.band_count();
  const int ny = (h + t - 1) / t, nx = (w + t - 1) / t;
  for (int ti = 0; ti < ny; ++ti) {
    for (int tj = 0; tj < nx; ++tj) {
      Tensor<float> x({1, bands, t, t});
      for (int b = 0; b < bands; ++b) {
        const auto mean = static_cast<float>(stats.mean[static_cast<std::size_t>(b)]);
        const auto inv = static_cast<float>(1.0 / stats.stddev[static_cast<std::size_t>(b)]);
        for (int i = 0; i < t; ++i) {
          const int si = ti * t + i;
          if (si >= h) break;
          for (int j = 0; j < t; ++j) {
            const int sj = tj * t + j;
            if (sj >= w) break;
            const float v = image.at(b, si, sj);
            x(0, b, i, j) = is_valid(v) ? (v - mean) * inv : 0.f;
          }
        }
      }
      const auto labels = net::predict_labels(model.forward(x));
      for (int i = 0; i < t && ti * t + i < h; ++i)
        for (int j = 0; j < t && tj * t + j < w; ++j)
          out.at(0, ti * t + i, tj * t + j) = static_cast<float>(labels(0, i, j));
    }
  }
  // nodata pixels are background by definition
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (!image.valid(i, j)) out.at(0, i, j) = 0.f;
  model.set_mode(saved);
  return out;
}

}  // namespace ldseg::train
