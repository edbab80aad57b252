#pragma once

#include <string>
#include <vector>

#include "flora/tensor.hpp"

namespace flora {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

struct SegScores {
  double iou = 0, dice = 0, precision = 0, recall = 0, f1 = 0;
  ConfusionCounts counts;
  bool degenerate = false;  // some ratio had a zero denominator
};

struct TileMetrics {
  std::string tile_id;
  double psnr = 0, ssim = 0;
  SegScores seg;
  double lpips = -1;  // < 0 when no external scorer is configured
};

struct MetricSummary {
  double psnr = 0, ssim = 0, iou = 0, dice = 0, precision = 0, recall = 0, f1 = 0;
  double lpips = -1;
  ConfusionCounts pooled;
  SegScores pooled_scores;  // ratios recomputed from pooled counts
  int64_t tiles = 0;
};

/// 10*log10(1/MSE); identical images give +infinity as the sentinel.
double psnr(const Tensor<double>& y_hat, const Tensor<double>& y);

/// 1 - ssim_loss kernel, so metric and loss cannot drift apart.
double ssim_metric(const Tensor<double>& y_hat, const Tensor<double>& y);

/// Binarizes m_hat at the threshold, counts against the binary mask. Zero
/// denominators report 1 for IoU/Dice when tp+fp+fn = 0, otherwise 0, with
/// the degenerate flag set.
SegScores seg_scores(const Tensor<double>& m_hat, const Tensor<double>& m, double threshold = 0.5);

SegScores scores_from_counts(const ConfusionCounts& c);

/// Arithmetic per-tile means plus pooled confusion counts.
MetricSummary aggregate(const std::vector<TileMetrics>& per_tile);

}  // namespace flora
