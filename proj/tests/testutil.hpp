#ifndef SALAUDIT_TESTUTIL_HPP
#define SALAUDIT_TESTUTIL_HPP

// Shared oracles for the test suites. Everything here is deliberately naive
// and independent of the library's fast paths: central finite differences
// against the double-precision engine, a direct per-window SSIM, and a
// rescan-everything PR sweep.

#include <cmath>
#include <vector>

#include "salaudit/metrics.hpp"
#include "salaudit/net.hpp"
#include "salaudit/ops.hpp"
#include "salaudit/rng.hpp"

namespace salaudit::testutil {

inline Ten<double> random_tensor(const std::vector<int>& shape, uint64_t seed, double scale) {
  Ten<double> t(shape);
  Rng rng(seed);
  for (auto& v : t.data) v = (rng.uniform() * 2.0 - 1.0) * scale;
  return t;
}

// bias_floor shifts biases into [floor, floor+0.4]; a positive floor keeps
// relu pre-activations away from the kink so differentiable cases are easy to
// sample.
inline WeightStoreT<double> random_weights(const Network& net, uint64_t seed, double scale,
                                           double bias_floor = 0.0) {
  WeightStoreT<double> ws;
  int li = 0;
  for (const auto& l : net.layers) {
    if (!l.parametric()) {
      ++li;
      continue;
    }
    const std::vector<int> wshape =
        l.kind == LayerSpec::Kind::conv2d
            ? std::vector<int>{l.out_channels, l.in_channels, l.kernel, l.kernel}
            : std::vector<int>{l.out_features, l.in_features};
    ws.put(weight_key(l.name), random_tensor(wshape, mix_seed(seed, 2 * li), scale));
    auto bias = random_tensor({wshape[0]}, mix_seed(seed, 2 * li + 1), 0.2);
    if (bias_floor != 0.0)
      for (auto& v : bias.data) v = bias_floor + std::abs(v);
    ws.put(bias_key(l.name), std::move(bias));
    ++li;
  }
  return ws;
}

// True when no ReLU pre-activation sits within the margin of its kink and no
// maxpool argmax can flip under a perturbation of that size. Ties between
// inactive (zero, post-relu) entries are locally flat, not kinks, so only an
// active runner-up forces the gap requirement.
inline bool differentiable_at(const Network& net, const WeightStoreT<double>& weights,
                              const Ten<double>& x, double margin) {
  const auto fwd = forward(net, weights, x);
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const auto& in = fwd.tape.entries[i].input;
    if (l.kind == LayerSpec::Kind::relu) {
      for (double v : in.data)
        if (std::abs(v) < margin) return false;
    } else if (l.kind == LayerSpec::Kind::maxpool) {
      const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
      const int ho = (H - l.kernel) / l.stride + 1, wo = (W - l.kernel) / l.stride + 1;
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            double best = -1e300, second = -1e300;
            for (int ky = 0; ky < l.kernel; ++ky)
              for (int kx = 0; kx < l.kernel; ++kx) {
                const double v = in.at(c, oy * l.stride + ky, ox * l.stride + kx);
                if (v > best) {
                  second = best;
                  best = v;
                } else if (v > second) {
                  second = v;
                }
              }
            if (second > 0.0 && best - second < margin) return false;
          }
    }
  }
  return true;
}

// Scalar projection of the network output: sum(seed * output). Lets the same
// finite-difference driver handle map-valued nets.
inline double projected_output(const Network& net, const WeightStoreT<double>& weights,
                               const Ten<double>& x, const Ten<double>& seed) {
  const auto fwd = forward(net, weights, x);
  double acc = 0.0;
  for (size_t i = 0; i < seed.data.size(); ++i) acc += seed.data[i] * fwd.output.data[i];
  return acc;
}

inline Ten<double> fd_input_grad(const Network& net, const WeightStoreT<double>& weights,
                                 const Ten<double>& x, const Ten<double>& seed, double h) {
  Ten<double> g(x.shape);
  Ten<double> probe = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    probe.data[i] = x.data[i] + h;
    const double up = projected_output(net, weights, probe, seed);
    probe.data[i] = x.data[i] - h;
    const double dn = projected_output(net, weights, probe, seed);
    probe.data[i] = x.data[i];
    g.data[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

inline WeightStoreT<double> fd_weight_grad(const Network& net,
                                           const WeightStoreT<double>& weights,
                                           const Ten<double>& x, const Ten<double>& seed,
                                           double h) {
  WeightStoreT<double> g;
  WeightStoreT<double> probe = weights.cast<double>();
  for (const auto& name : weights.names()) {
    Ten<double> gt(weights.get(name).shape);
    for (size_t i = 0; i < gt.data.size(); ++i) {
      const double orig = weights.get(name).data[i];
      probe.get_mutable(name).data[i] = orig + h;
      const double up = projected_output(net, probe, x, seed);
      probe.get_mutable(name).data[i] = orig - h;
      const double dn = projected_output(net, probe, x, seed);
      probe.get_mutable(name).data[i] = orig;
      gt.data[i] = (up - dn) / (2.0 * h);
    }
    g.put(name, std::move(gt));
  }
  return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// A small random architecture drawn from the layer kinds the classifiers use.
// variant cycles through conv/pool/gap/dense mixtures; all end in one logit.
inline Network random_small_net(uint64_t seed, int input = 6) {
  Rng rng(seed);
  using L = LayerSpec;
  std::vector<L> layers;
  const int size0 = input;
  const int c1 = 2 + static_cast<int>(rng.below(2));
  layers.push_back(L::conv("c1", 1, c1, 3, 1, 1));
  const int variant = static_cast<int>(rng.below(4));
  if (variant != 1) layers.push_back(L::relu_layer("r1"));
  int c2 = c1;
  if (variant != 3) {
    c2 = 2 + static_cast<int>(rng.below(2));
    layers.push_back(L::conv("c2", c1, c2, 3, 1, 1));
    layers.push_back(L::relu_layer("r2"));
  }
  if (variant % 2 == 0) {
    layers.push_back(L::maxpool_layer("p1"));
    input /= 2;
  } else if (variant == 3) {
    layers.push_back(L::avgpool_layer("p1"));
    input /= 2;
  }
  if (variant < 2) {
    layers.push_back(L::globalavgpool_layer("gap"));
    layers.push_back(L::dense_layer("head", c2, 1));
  } else {
    layers.push_back(L::dense_layer("head", c2 * input * input, 1));
  }
  return Network(std::move(layers), 1, size0, size0);
}

// Draws (weights, input) pairs until the configuration is differentiable.
// The margin comfortably exceeds what a 1e-3 single-coordinate perturbation
// can move any pre-activation by at these weight scales.
inline std::pair<WeightStoreT<double>, Ten<double>> differentiable_case(const Network& net,
                                                                        uint64_t seed) {
  for (uint64_t attempt = 0; attempt < 5000; ++attempt) {
    auto ws = random_weights(net, mix_seed(seed, 50 + attempt * 2), 0.4, 0.1);
    auto x = random_tensor({net.in_channels, net.in_h, net.in_w},
                           mix_seed(seed, 91 + attempt * 2), 1.0);
    if (differentiable_at(net, ws, x, 0.01)) return {std::move(ws), std::move(x)};
  }
  throw std::runtime_error("no differentiable configuration found; widen the generator");
}

// Independent SSIM: direct weighted sums over every valid window position.
inline double reference_ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {}) {
  const int h = a.shape[0], w = a.shape[1];
  const auto na = minmax_normalize(a.data);
  const auto nb = minmax_normalize(b.data);
  const int ws = cfg.window;
  std::vector<double> kern(static_cast<size_t>(ws) * ws);
  {
    double sum = 0.0;
    const int c = ws / 2;
    for (int y = 0; y < ws; ++y)
      for (int x = 0; x < ws; ++x) {
        const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
        kern[static_cast<size_t>(y) * ws + x] = std::exp(-d2 / (2.0 * cfg.sigma * cfg.sigma));
        sum += kern[static_cast<size_t>(y) * ws + x];
      }
    for (auto& v : kern) v /= sum;
  }
  const double c1 = cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range;
  const double c2 = cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range;
  double acc = 0.0;
  int windows = 0;
  for (int oy = 0; oy + ws <= h; ++oy) {
    for (int ox = 0; ox + ws <= w; ++ox) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int y = 0; y < ws; ++y)
        for (int x = 0; x < ws; ++x) {
          const double k = kern[static_cast<size_t>(y) * ws + x];
          mu_a += k * na[static_cast<size_t>(oy + y) * w + ox + x];
          mu_b += k * nb[static_cast<size_t>(oy + y) * w + ox + x];
        }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int y = 0; y < ws; ++y)
        for (int x = 0; x < ws; ++x) {
          const double k = kern[static_cast<size_t>(y) * ws + x];
          const double da = na[static_cast<size_t>(oy + y) * w + ox + x] - mu_a;
          const double db = nb[static_cast<size_t>(oy + y) * w + ox + x] - mu_b;
          va += k * da * da;
          vb += k * db * db;
          cov += k * da * db;
        }
      acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return acc / windows;
}

// Exhaustive PR sweep: every distinct score as a threshold, counts recomputed
// from scratch each time, step-integrated.
inline double reference_auprc(const std::vector<float>& scores,
                              const std::vector<uint8_t>& truth) {
  std::vector<float> uniq(scores);
  std::sort(uniq.begin(), uniq.end(), std::greater<float>());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  int n_pos = 0;
  for (uint8_t t : truth) n_pos += t ? 1 : 0;
  double ap = 0.0, prev_recall = 0.0;
  for (float th : uniq) {
    int tp = 0, pred = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) {
        ++pred;
        tp += truth[i] ? 1 : 0;
      }
    }
    const double precision = static_cast<double>(tp) / pred;
    const double recall = static_cast<double>(tp) / n_pos;
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace salaudit::testutil

#endif  // SALAUDIT_TESTUTIL_HPP
