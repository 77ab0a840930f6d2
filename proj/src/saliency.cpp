#include "salaudit/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <tuple>
#include <unordered_set>

#include "salaudit/rng.hpp"

namespace salaudit {

const char* method_name(Method m) {
  switch (m) {
    case Method::grad: return "grad";
    case Method::smoothgrad: return "sg";
    case Method::intgrad: return "ig";
    case Method::smooth_intgrad: return "sig";
    case Method::gradcam: return "gcam";
    case Method::xrai: return "xrai";
    case Method::guided_backprop: return "gbp";
    case Method::guided_gradcam: return "ggcam";
  }
  return "?";
}

const char* method_label(Method m) {
  switch (m) {
    case Method::grad: return "GRAD";
    case Method::smoothgrad: return "SG";
    case Method::intgrad: return "IG";
    case Method::smooth_intgrad: return "SIG";
    case Method::gradcam: return "GCAM";
    case Method::xrai: return "XRAI";
    case Method::guided_backprop: return "GBP";
    case Method::guided_gradcam: return "GGCAM";
  }
  return "?";
}

Method method_from_name(const std::string& s) {
  for (Method m : kAllMethods)
    if (s == method_name(m)) return m;
  throw ValidationError("unknown saliency method '" + s + "'");
}

void SaliencyConfig::validate() const {
  if (ig_steps < 1) throw ValidationError("saliency config: ig_steps must be >= 1");
  if (sg_samples < 1) throw ValidationError("saliency config: sg_samples must be >= 1");
  if (!(sg_noise_sigma > 0.0f && sg_noise_sigma < 1.0f))
    throw ValidationError("saliency config: sg_noise_sigma must lie in (0, 1)");
  if (xrai_segment_count < 2)
    throw ValidationError("saliency config: xrai_segment_count must be >= 2");
}

namespace {

Tensor to_hw(const Tensor& chw) {
  if (chw.rank() != 3 || chw.shape[0] != 1)
    throw ValidationError("saliency: expected a [1,H,W] input gradient, got " +
                          shape_str(chw.shape));
  return Tensor({chw.shape[1], chw.shape[2]}, chw.data);
}

Tensor perturbed(const Tensor& image, double sigma, Rng& rng) {
  Tensor x = image;
  for (auto& v : x.data) v += static_cast<float>(rng.normal() * sigma);
  return x;
}

double noise_scale(const Tensor& image, const SaliencyConfig& cfg) {
  const double range =
      static_cast<double>(image.max_value()) - static_cast<double>(image.min_value());
  return static_cast<double>(cfg.sg_noise_sigma) * range;
}

}  // namespace

Tensor grad_map(const Network& net, const WeightStore& weights, const Tensor& image) {
  auto fwd = forward(net, weights, image);
  return to_hw(backward_input(net, weights, fwd.tape, ReluRule::standard));
}

Tensor smoothgrad_map(const Network& net, const WeightStore& weights, const Tensor& image,
                      const SaliencyConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.noise_seed);
  const double sigma = noise_scale(image, cfg);
  Tensor acc({image.shape[1], image.shape[2]});
  for (int s = 0; s < cfg.sg_samples; ++s) {
    const Tensor g = grad_map(net, weights, perturbed(image, sigma, rng));
    for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
  }
  for (auto& v : acc.data) v /= static_cast<float>(cfg.sg_samples);
  return acc;
}

Tensor intgrad_map(const Network& net, const WeightStore& weights, const Tensor& image,
                   const SaliencyConfig& cfg) {
  cfg.validate();
  Tensor acc({image.shape[1], image.shape[2]});
  Tensor x(image.shape);
  for (int k = 1; k <= cfg.ig_steps; ++k) {
    const float a = static_cast<float>(k) / static_cast<float>(cfg.ig_steps);
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = a * image.data[i];
    const Tensor g = grad_map(net, weights, x);
    for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
  }
  for (size_t i = 0; i < acc.data.size(); ++i)
    acc.data[i] = acc.data[i] / static_cast<float>(cfg.ig_steps) * image.data[i];
  return acc;
}

Tensor smooth_intgrad_map(const Network& net, const WeightStore& weights, const Tensor& image,
                          const SaliencyConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.noise_seed);
  const double sigma = noise_scale(image, cfg);
  Tensor acc({image.shape[1], image.shape[2]});
  for (int s = 0; s < cfg.sg_samples; ++s) {
    const Tensor m = intgrad_map(net, weights, perturbed(image, sigma, rng), cfg);
    for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += m.data[i];
  }
  for (auto& v : acc.data) v /= static_cast<float>(cfg.sg_samples);
  return acc;
}

Tensor upsample_bilinear(const Tensor& src, int out_h, int out_w) {
  if (src.rank() != 2) throw ValidationError("upsample_bilinear: expects a 2-d map");
  const int sh = src.shape[0], sw = src.shape[1];
  Tensor out({out_h, out_w});
  const double ry = static_cast<double>(sh) / out_h;
  const double rx = static_cast<double>(sw) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * ry - 0.5, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double ty = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * rx - 0.5, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double tx = fx - x0;
      const double v = (1 - ty) * ((1 - tx) * src.at(y0, x0) + tx * src.at(y0, x1)) +
                       ty * ((1 - tx) * src.at(y1, x0) + tx * src.at(y1, x1));
      out.at(y, x) = static_cast<float>(v);
    }
  }
  return out;
}

Tensor gradcam_map(const Network& net, const WeightStore& weights, const Tensor& image,
                   const SaliencyConfig& cfg) {
  const std::string layer =
      cfg.gradcam_layer.empty() ? net.last_conv_layer() : cfg.gradcam_layer;
  if (net.layer(layer).kind != LayerSpec::Kind::conv2d)
    throw ValidationError("gradcam: layer '" + layer + "' is not a conv layer");

  auto fwd = forward(net, weights, image);
  if (fwd.output.numel() != 1)
    throw ValidationError("gradcam: network output is not scalar");
  Tensor seed(fwd.output.shape);
  seed.data[0] = 1.0f;
  auto back = backward(net, weights, fwd.tape, seed, ReluRule::standard, layer);

  const Tensor& act = back.captured_activation;
  const Tensor& g = back.captured_grad;
  const int c = act.shape[0], h = act.shape[1], w = act.shape[2];
  Tensor cam({h, w});
  for (int ch = 0; ch < c; ++ch) {
    double wsum = 0.0;
    const float* gc = g.ptr() + static_cast<size_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) wsum += gc[i];
    const float wc = static_cast<float>(wsum / (h * w));
    const float* ac = act.ptr() + static_cast<size_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) cam.data[static_cast<size_t>(i)] += wc * ac[i];
  }
  for (auto& v : cam.data) v = v > 0.0f ? v : 0.0f;
  return upsample_bilinear(cam, image.shape[1], image.shape[2]);
}

Tensor guided_backprop_map(const Network& net, const WeightStore& weights, const Tensor& image) {
  auto fwd = forward(net, weights, image);
  return to_hw(backward_input(net, weights, fwd.tape, ReluRule::guided));
}

Tensor guided_gradcam_map(const Network& net, const WeightStore& weights, const Tensor& image,
                          const SaliencyConfig& cfg) {
  const Tensor cam = gradcam_map(net, weights, image, cfg);
  const Tensor gbp = guided_backprop_map(net, weights, image);
  Tensor out({image.shape[1], image.shape[2]});
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = cam.data[i] * gbp.data[i];
  return out;
}

Segmentation segment_regions(const Tensor& image2d, int target_regions) {
  if (image2d.rank() != 2) throw ValidationError("segment_regions: expects a 2-d image");
  if (target_regions < 2)
    throw ValidationError("segment_regions: target region count must be >= 2");
  const int h = image2d.shape[0], w = image2d.shape[1];
  const int n = h * w;

  std::vector<int> parent(static_cast<size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<double> sum(static_cast<size_t>(n));
  std::vector<int> cnt(static_cast<size_t>(n), 1);
  for (int i = 0; i < n; ++i) sum[static_cast<size_t>(i)] = image2d.data[static_cast<size_t>(i)];

  auto find = [&](int a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  };
  auto mean_of = [&](int r) { return sum[static_cast<size_t>(r)] / cnt[static_cast<size_t>(r)]; };

  std::vector<std::unordered_set<int>> adj(static_cast<size_t>(n));
  using Edge = std::tuple<double, int, int>;  // weight, lo root, hi root
  std::priority_queue<Edge, std::vector<Edge>, std::greater<Edge>> heap;
  auto push_edge = [&](int a, int b) {
    const int lo = std::min(a, b), hi = std::max(a, b);
    heap.emplace(std::abs(mean_of(lo) - mean_of(hi)), lo, hi);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (x + 1 < w) {
        adj[static_cast<size_t>(i)].insert(i + 1);
        adj[static_cast<size_t>(i + 1)].insert(i);
        push_edge(i, i + 1);
      }
      if (y + 1 < h) {
        adj[static_cast<size_t>(i)].insert(i + w);
        adj[static_cast<size_t>(i + w)].insert(i);
        push_edge(i, i + w);
      }
    }

  int regions = n;
  constexpr double kZeroAffinity = 1e-12;
  while (!heap.empty() && regions > 1) {
    auto [wgt, a, b] = heap.top();
    heap.pop();
    const int ra = find(a), rb = find(b);
    if (ra != rb && (ra != a || rb != b)) continue;  // endpoints merged away, stale
    if (ra == rb) continue;
    const double cur = std::abs(mean_of(ra) - mean_of(rb));
    if (cur != wgt) {  // weight out of date, re-queue at the true cost
      push_edge(ra, rb);
      continue;
    }
    if (regions <= target_regions && cur > kZeroAffinity) break;

    // merge smaller adjacency set into the larger; keep the surviving root
    int keep = ra, drop = rb;
    if (adj[static_cast<size_t>(drop)].size() > adj[static_cast<size_t>(keep)].size())
      std::swap(keep, drop);
    parent[static_cast<size_t>(drop)] = keep;
    sum[static_cast<size_t>(keep)] += sum[static_cast<size_t>(drop)];
    cnt[static_cast<size_t>(keep)] += cnt[static_cast<size_t>(drop)];
    for (int nb : adj[static_cast<size_t>(drop)]) {
      const int rn = find(nb);
      if (rn == keep) continue;
      adj[static_cast<size_t>(rn)].erase(drop);
      adj[static_cast<size_t>(rn)].insert(keep);
      adj[static_cast<size_t>(keep)].insert(rn);
    }
    adj[static_cast<size_t>(keep)].erase(drop);
    adj[static_cast<size_t>(keep)].erase(keep);
    adj[static_cast<size_t>(drop)].clear();
    for (int nb : adj[static_cast<size_t>(keep)]) push_edge(keep, find(nb));
    --regions;
  }

  Segmentation seg;
  seg.labels.assign(static_cast<size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    const int r = find(i);
    if (seg.labels[static_cast<size_t>(r)] == -1)
      seg.labels[static_cast<size_t>(r)] = seg.n_regions++;
  }
  for (int i = 0; i < n; ++i)
    seg.labels[static_cast<size_t>(i)] = seg.labels[static_cast<size_t>(find(i))];
  return seg;
}

Tensor xrai_rank_map(const Segmentation& seg, const Tensor& attribution) {
  if (attribution.rank() != 2 ||
      static_cast<size_t>(attribution.numel()) != seg.labels.size())
    throw ValidationError("xrai_rank_map: attribution does not match segmentation");
  std::vector<double> sum(static_cast<size_t>(seg.n_regions), 0.0);
  std::vector<int64_t> cnt(static_cast<size_t>(seg.n_regions), 0);
  for (size_t i = 0; i < seg.labels.size(); ++i) {
    sum[static_cast<size_t>(seg.labels[i])] += attribution.data[i];
    cnt[static_cast<size_t>(seg.labels[i])] += 1;
  }
  std::vector<int> order(static_cast<size_t>(seg.n_regions));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ma = sum[static_cast<size_t>(a)] / static_cast<double>(cnt[static_cast<size_t>(a)]);
    const double mb = sum[static_cast<size_t>(b)] / static_cast<double>(cnt[static_cast<size_t>(b)]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  std::vector<float> value(static_cast<size_t>(seg.n_regions));
  for (int rank = 0; rank < seg.n_regions; ++rank)
    value[static_cast<size_t>(order[static_cast<size_t>(rank)])] =
        1.0f - static_cast<float>(rank) / static_cast<float>(seg.n_regions);
  Tensor out(attribution.shape);
  for (size_t i = 0; i < seg.labels.size(); ++i)
    out.data[i] = value[static_cast<size_t>(seg.labels[i])];
  return out;
}

Tensor xrai_map(const Network& net, const WeightStore& weights, const Tensor& image,
                const SaliencyConfig& cfg) {
  cfg.validate();
  const Tensor attribution = intgrad_map(net, weights, image, cfg);
  const Tensor img2d({image.shape[1], image.shape[2]}, image.data);
  const Segmentation seg = segment_regions(img2d, cfg.xrai_segment_count);
  return xrai_rank_map(seg, attribution);
}

SaliencyMap compute_map(Method m, const Network& net, const WeightStore& weights,
                        const Tensor& image, const SaliencyConfig& cfg, std::string image_id) {
  SaliencyMap out;
  out.method = m;
  out.model_fingerprint = weights.content_hash();
  out.image_id = std::move(image_id);
  switch (m) {
    case Method::grad: out.values = grad_map(net, weights, image); break;
    case Method::smoothgrad: out.values = smoothgrad_map(net, weights, image, cfg); break;
    case Method::intgrad: out.values = intgrad_map(net, weights, image, cfg); break;
    case Method::smooth_intgrad: out.values = smooth_intgrad_map(net, weights, image, cfg); break;
    case Method::gradcam: out.values = gradcam_map(net, weights, image, cfg); break;
    case Method::xrai: out.values = xrai_map(net, weights, image, cfg); break;
    case Method::guided_backprop: out.values = guided_backprop_map(net, weights, image); break;
    case Method::guided_gradcam: out.values = guided_gradcam_map(net, weights, image, cfg); break;
  }
  return out;
}

}  // namespace salaudit
