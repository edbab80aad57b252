#include "flora/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "flora/losses.hpp"

namespace flora {

double psnr(const Tensor<double>& y_hat, const Tensor<double>& y) {
  if (!shape_eq(y_hat.shape, y.shape)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    const double d = y_hat.data[static_cast<size_t>(i)] - y.data[static_cast<size_t>(i)];
    mse += d * d;
  }
  mse /= static_cast<double>(y.numel());
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim_metric(const Tensor<double>& y_hat, const Tensor<double>& y) {
  Graph<double> g;
  Var<double> loss = ssim_loss(g.constant(y_hat), g.constant(y));
  return 1.0 - loss.scalar();
}

SegScores scores_from_counts(const ConfusionCounts& c) {
  SegScores s;
  s.counts = c;
  const int64_t overlap_den = c.tp + c.fp + c.fn;
  if (overlap_den == 0) {
    s.iou = 1.0;
    s.dice = 1.0;
    s.degenerate = true;
  } else {
    s.iou = static_cast<double>(c.tp) / static_cast<double>(overlap_den);
    s.dice = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  }
  if (c.tp + c.fp == 0) {
    s.precision = 0.0;
    s.degenerate = true;
  } else {
    s.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn == 0) {
    s.recall = 0.0;
    s.degenerate = true;
  } else {
    s.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  if (s.precision + s.recall <= 0.0) {
    s.f1 = 0.0;
    if (overlap_den != 0) s.degenerate = true;
  } else {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  if (overlap_den == 0) s.f1 = 1.0;  // empty prediction on empty truth
  return s;
}

SegScores seg_scores(const Tensor<double>& m_hat, const Tensor<double>& m, double threshold) {
  if (!shape_eq(m_hat.shape, m.shape)) throw std::invalid_argument("seg_scores: shape mismatch");
  ConfusionCounts c;
  for (int64_t i = 0; i < m.numel(); ++i) {
    const bool truth = m.data[static_cast<size_t>(i)] > 0.5;
    const bool pred = m_hat.data[static_cast<size_t>(i)] >= threshold;
    if (truth && pred)
      ++c.tp;
    else if (!truth && pred)
      ++c.fp;
    else if (truth && !pred)
      ++c.fn;
    else
      ++c.tn;
  }
  return scores_from_counts(c);
}

MetricSummary aggregate(const std::vector<TileMetrics>& per_tile) {
  MetricSummary s;
  s.tiles = static_cast<int64_t>(per_tile.size());
  if (per_tile.empty()) return s;
  int64_t lpips_n = 0;
  for (const auto& t : per_tile) {
    s.psnr += t.psnr;
    s.ssim += t.ssim;
    s.iou += t.seg.iou;
    s.dice += t.seg.dice;
    s.precision += t.seg.precision;
    s.recall += t.seg.recall;
    s.f1 += t.seg.f1;
    s.pooled += t.seg.counts;
    if (t.lpips >= 0) {
      if (s.lpips < 0) s.lpips = 0;
      s.lpips += t.lpips;
      ++lpips_n;
    }
  }
  const double n = static_cast<double>(per_tile.size());
  s.psnr /= n;
  s.ssim /= n;
  s.iou /= n;
  s.dice /= n;
  s.precision /= n;
  s.recall /= n;
  s.f1 /= n;
  if (lpips_n > 0) s.lpips /= static_cast<double>(lpips_n);
  s.pooled_scores = scores_from_counts(s.pooled);
  return s;
}

}  // namespace flora
