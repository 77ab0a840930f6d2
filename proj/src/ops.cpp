#include "salaudit/ops.hpp"

#include <cmath>

#include "salaudit/rng.hpp"

namespace salaudit {

double bce_loss(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.empty()) throw ValidationError("bce_loss: empty batch");
  if (probabilities.size() != labels.size())
    throw ValidationError("bce_loss: probability/label count mismatch");
  constexpr double kEps = 1e-7;
  double acc = 0.0;
  for (size_t i = 0; i < probabilities.size(); ++i) {
    double p = probabilities[i];
    if (p < kEps) p = kEps;
    if (p > 1.0 - kEps) p = 1.0 - kEps;
    const int y = labels[i];
    if (y != 0 && y != 1) throw ValidationError("bce_loss: labels must be 0 or 1");
    acc += y ? -std::log(p) : -std::log(1.0 - p);
  }
  return acc / static_cast<double>(probabilities.size());
}

void adam_step(WeightStore& weights, const WeightStore& grads, AdamState& state, float lr) {
  constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kEps = 1e-8f;
  if (state.step == 0) {
    for (const auto& name : weights.names()) {
      state.m.put(name, Tensor(weights.get(name).shape));
      state.v.put(name, Tensor(weights.get(name).shape));
    }
  }
  state.step += 1;
  const float c1 = 1.0f - std::pow(kBeta1, static_cast<float>(state.step));
  const float c2 = 1.0f - std::pow(kBeta2, static_cast<float>(state.step));
  for (const auto& name : weights.names()) {
    auto& w = weights.get_mutable(name);
    const auto& g = grads.get(name);
    if (!g.same_shape(w))
      throw ValidationError("adam_step: gradient shape mismatch for '" + name + "'");
    auto& m = state.m.get_mutable(name);
    auto& v = state.v.get_mutable(name);
    for (size_t i = 0; i < w.data.size(); ++i) {
      m.data[i] = kBeta1 * m.data[i] + (1.0f - kBeta1) * g.data[i];
      v.data[i] = kBeta2 * v.data[i] + (1.0f - kBeta2) * g.data[i] * g.data[i];
      const float mhat = m.data[i] / c1;
      const float vhat = v.data[i] / c2;
      w.data[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

Tensor init_truncated_normal(const std::vector<int>& shape, uint64_t seed, float stddev) {
  if (stddev <= 0.0f) throw ValidationError("init_truncated_normal: stddev must be positive");
  Tensor t(shape);
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<float>(rng.truncated_normal(stddev));
  return t;
}

}  // namespace salaudit
