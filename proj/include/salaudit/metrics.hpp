#ifndef SALAUDIT_METRICS_HPP
#define SALAUDIT_METRICS_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "salaudit/tensor.hpp"

namespace salaudit {

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Threshold sweep from the highest score down; recall is nondecreasing and
// reaches 1 at the final point. Ties share one point.
struct PRCurve {
  std::vector<PRPoint> points;
};

// Pixel-level precision/recall against a binary mask. Every pixel with score
// >= threshold counts as predicted positive. Thresholds are the distinct
// scores, descending; maps with more than 512 distinct values are swept at
// 512 rank-spaced thresholds instead (rank-based, so any strictly increasing
// transform of the scores yields the identical curve).
PRCurve pr_curve(std::span<const float> scores, std::span<const uint8_t> truth);

// Average-precision step integral: sum of (R_k - R_{k-1}) * P_k.
double auprc(const PRCurve& curve);

double auprc(std::span<const float> scores, std::span<const uint8_t> truth);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  // dynamic range after per-map min-max normalization
  double dynamic_range = 1.0;
};

// Mean local structural similarity over all fully contained window positions.
// Each map is min-max normalized to [0,1] first; constant maps normalize to
// all 0.5 so the comparison stays defined.
double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {});

// Min-max normalization to [0,1] as used by ssim, exposed for rendering.
std::vector<double> minmax_normalize(std::span<const float> values);

}  // namespace salaudit

#endif  // SALAUDIT_METRICS_HPP
