#ifndef SALAUDIT_OPS_HPP
#define SALAUDIT_OPS_HPP

#include <cstdint>
#include <span>

#include "salaudit/net.hpp"
#include "salaudit/tensor.hpp"

namespace salaudit {

// Mean binary cross entropy over a batch of probabilities, clamped to
// [eps, 1-eps] with eps = 1e-7 so log never sees 0. Empty batches are
// rejected.
double bce_loss(std::span<const double> probabilities, std::span<const int> labels);

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct AdamState {
  WeightStore m;
  WeightStore v;
  int64_t step = 0;
};

// One Adam update (betas 0.9/0.999, eps 1e-8) applied in place. State starts
// zeroed on the first call and must track the same weight set afterwards.
void adam_step(WeightStore& weights, const WeightStore& grads, AdamState& state, float lr);

// Samples N(0, stddev^2) with values outside +/- 2*stddev rejected.
Tensor init_truncated_normal(const std::vector<int>& shape, uint64_t seed, float stddev);

}  // namespace salaudit

#endif  // SALAUDIT_OPS_HPP
