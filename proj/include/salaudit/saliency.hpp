#ifndef SALAUDIT_SALIENCY_HPP
#define SALAUDIT_SALIENCY_HPP

#include <array>
#include <cstdint>
#include <string>

#include "salaudit/net.hpp"
#include "salaudit/tensor.hpp"

namespace salaudit {

// Every method differentiates the pre-sigmoid logit and emits a raw signed
// HxW map aligned with the input; no absolute values are taken anywhere.
enum class Method {
  grad,
  smoothgrad,
  intgrad,
  smooth_intgrad,
  gradcam,
  xrai,
  guided_backprop,
  guided_gradcam,
};

inline constexpr std::array<Method, 8> kAllMethods = {
    Method::grad,         Method::smoothgrad,      Method::intgrad,
    Method::smooth_intgrad, Method::gradcam,       Method::xrai,
    Method::guided_backprop, Method::guided_gradcam,
};

const char* method_name(Method m);         // short id: grad, sg, ig, sig, gcam, xrai, gbp, ggcam
const char* method_label(Method m);        // display label: GRAD, SG, ...
Method method_from_name(const std::string& s);

struct SaliencyConfig {
  int ig_steps = 25;
  int sg_samples = 25;
  float sg_noise_sigma = 0.15f;  // fraction of the input dynamic range
  std::string gradcam_layer;     // empty selects the last conv layer
  int xrai_segment_count = 60;   // approximate region target
  uint64_t noise_seed = 404;
  // The path-attribution baseline is the all-zeros image.

  void validate() const;
};

struct SaliencyMap {
  Tensor values;  // [H,W]
  Method method = Method::grad;
  uint64_t model_fingerprint = 0;
  std::string image_id;
};

SaliencyMap compute_map(Method m, const Network& net, const WeightStore& weights,
                        const Tensor& image, const SaliencyConfig& cfg,
                        std::string image_id = {});

// d(logit)/d(input).
Tensor grad_map(const Network& net, const WeightStore& weights, const Tensor& image);

// Mean gradient over Gaussian-perturbed copies of the input.
Tensor smoothgrad_map(const Network& net, const WeightStore& weights, const Tensor& image,
                      const SaliencyConfig& cfg);

// Path attribution from the zero baseline: (x - b) times the mean gradient
// along the straight-line interpolation, right-endpoint steps k/m, k=1..m.
Tensor intgrad_map(const Network& net, const WeightStore& weights, const Tensor& image,
                   const SaliencyConfig& cfg);

// Mean path attribution over Gaussian-perturbed copies of the input.
Tensor smooth_intgrad_map(const Network& net, const WeightStore& weights, const Tensor& image,
                          const SaliencyConfig& cfg);

// ReLU of the gradient-weighted feature maps of the chosen conv layer,
// bilinearly upsampled to the input size.
Tensor gradcam_map(const Network& net, const WeightStore& weights, const Tensor& image,
                   const SaliencyConfig& cfg);

// Backprop where each ReLU also zeroes negative incoming gradients.
Tensor guided_backprop_map(const Network& net, const WeightStore& weights, const Tensor& image);

// Elementwise product of the upsampled class activation map and guided
// backprop.
Tensor guided_gradcam_map(const Network& net, const WeightStore& weights, const Tensor& image,
                          const SaliencyConfig& cfg);

// Region-ranked path attribution: segment the image by intensity affinity,
// rank regions by mean attribution, emit 1 - order/regions per region.
Tensor xrai_map(const Network& net, const WeightStore& weights, const Tensor& image,
                const SaliencyConfig& cfg);

// xrai internals, separable for direct verification ------------------------

struct Segmentation {
  std::vector<int> labels;  // per pixel, compact 0..n_regions-1
  int n_regions = 0;
};

// Greedy agglomerative merge on the 4-neighbor graph, cheapest mean-intensity
// difference first, down to roughly target_regions (zero-cost merges continue
// past the target, so a uniform image collapses to one region).
Segmentation segment_regions(const Tensor& image2d, int target_regions);

// Piecewise-constant rank map over a fixed segmentation.
Tensor xrai_rank_map(const Segmentation& seg, const Tensor& attribution);

// Bilinear resize of a 2-d map (used for the class activation map).
Tensor upsample_bilinear(const Tensor& src, int out_h, int out_w);

}  // namespace salaudit

#endif  // SALAUDIT_SALIENCY_HPP
