#include "salaudit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace salaudit {

PRCurve pr_curve(std::span<const float> scores, std::span<const uint8_t> truth) {
  if (scores.size() != truth.size())
    throw ValidationError("pr_curve: score/truth size mismatch");
  if (scores.empty()) throw ValidationError("pr_curve: empty input");
  int64_t n_pos = 0;
  for (uint8_t t : truth) n_pos += t ? 1 : 0;
  if (n_pos == 0)
    throw ValidationError("pr_curve: truth has no positive pixels, curve undefined");

  const size_t n = scores.size();
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    return scores[a] > scores[b];
  });

  // Rank positions whose scores become thresholds. Below the cap every
  // distinct value is swept; above it, 512 rank-spaced positions (always
  // including the minimum so recall closes at 1).
  constexpr size_t kMaxThresholds = 512;
  std::vector<uint8_t> emit_at(n, 0);
  if (n <= kMaxThresholds) {
    std::fill(emit_at.begin(), emit_at.end(), 1);
  } else {
    for (size_t j = 1; j <= kMaxThresholds; ++j)
      emit_at[j * n / kMaxThresholds - 1] = 1;
  }

  PRCurve curve;
  int64_t cum_pred = 0, cum_tp = 0;
  size_t i = 0;
  while (i < n) {
    const float v = scores[order[i]];
    bool emit = false;
    size_t j = i;
    for (; j < n && scores[order[j]] == v; ++j) {
      cum_pred += 1;
      cum_tp += truth[order[j]] ? 1 : 0;
      emit |= emit_at[j] != 0;
    }
    if (emit) {
      PRPoint p;
      p.threshold = static_cast<double>(v);
      p.precision = static_cast<double>(cum_tp) / static_cast<double>(cum_pred);
      p.recall = static_cast<double>(cum_tp) / static_cast<double>(n_pos);
      curve.points.push_back(p);
    }
    i = j;
  }
  return curve;
}

double auprc(const PRCurve& curve) {
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : curve.points) {
    ap += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return ap;
}

double auprc(std::span<const float> scores, std::span<const uint8_t> truth) {
  return auprc(pr_curve(scores, truth));
}

std::vector<double> minmax_normalize(std::span<const float> values) {
  double mn = values[0], mx = values[0];
  for (float v : values) {
    mn = std::min(mn, static_cast<double>(v));
    mx = std::max(mx, static_cast<double>(v));
  }
  std::vector<double> out(values.size());
  if (mx == mn) {
    std::fill(out.begin(), out.end(), 0.5);
  } else {
    const double inv = 1.0 / (mx - mn);
    for (size_t i = 0; i < values.size(); ++i)
      out[i] = (static_cast<double>(values[i]) - mn) * inv;
  }
  return out;
}

namespace {

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<size_t>(size));
  const int c = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    sum += k[static_cast<size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable valid-mode Gaussian filter: rows then columns.
std::vector<double> gauss_filter(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& k) {
  const int ks = static_cast<int>(k.size());
  const int wo = w - ks + 1, ho = h - ks + 1;
  std::vector<double> tmp(static_cast<size_t>(h) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int i = 0; i < ks; ++i) acc += k[static_cast<size_t>(i)] * img[static_cast<size_t>(y) * w + x + i];
      tmp[static_cast<size_t>(y) * wo + x] = acc;
    }
  std::vector<double> out(static_cast<size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int i = 0; i < ks; ++i) acc += k[static_cast<size_t>(i)] * tmp[static_cast<size_t>(y + i) * wo + x];
      out[static_cast<size_t>(y) * wo + x] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ValidationError("ssim: expects 2-d maps, got " + shape_str(a.shape) + " and " +
                          shape_str(b.shape));
  if (!a.same_shape(b))
    throw ValidationError("ssim: shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
  const int h = a.shape[0], w = a.shape[1];
  if (h < cfg.window || w < cfg.window)
    throw ValidationError("ssim: map smaller than the " + std::to_string(cfg.window) +
                          "x" + std::to_string(cfg.window) + " window");

  const auto na = minmax_normalize(a.data);
  const auto nb = minmax_normalize(b.data);

  std::vector<double> aa(na.size()), bb(na.size()), ab(na.size());
  for (size_t i = 0; i < na.size(); ++i) {
    aa[i] = na[i] * na[i];
    bb[i] = nb[i] * nb[i];
    ab[i] = na[i] * nb[i];
  }

  const auto k = gaussian_kernel(cfg.window, cfg.sigma);
  const auto mu_a = gauss_filter(na, h, w, k);
  const auto mu_b = gauss_filter(nb, h, w, k);
  const auto e_aa = gauss_filter(aa, h, w, k);
  const auto e_bb = gauss_filter(bb, h, w, k);
  const auto e_ab = gauss_filter(ab, h, w, k);

  const double c1 = cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range;
  const double c2 = cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range;

  double acc = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    acc += num / den;
  }
  return acc / static_cast<double>(mu_a.size());
}

}  // namespace salaudit
