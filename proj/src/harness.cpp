#include "salaudit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "salaudit/ops.hpp"
#include "salaudit/rng.hpp"

namespace salaudit {

BootstrapResult paired_bootstrap(std::span<const double> diffs, int n_resamples, uint64_t seed) {
  if (diffs.size() < 20)
    throw ValidationError("paired_bootstrap: needs at least 20 paired observations, got " +
                          std::to_string(diffs.size()));
  if (n_resamples < 100) throw ValidationError("paired_bootstrap: too few resamples");

  BootstrapResult r;
  double mean = 0.0;
  for (double d : diffs) mean += d;
  r.mean = mean / static_cast<double>(diffs.size());

  Rng rng(seed);
  std::vector<double> means(static_cast<size_t>(n_resamples));
  for (auto& m : means) {
    double acc = 0.0;
    for (size_t i = 0; i < diffs.size(); ++i) acc += diffs[rng.below(diffs.size())];
    m = acc / static_cast<double>(diffs.size());
  }
  std::sort(means.begin(), means.end());
  const auto pick = [&](double q) {
    const auto idx = static_cast<size_t>(q * static_cast<double>(n_resamples - 1));
    return means[idx];
  };
  r.ci_lo = pick(0.025);
  r.ci_hi = pick(0.975);
  r.better = r.ci_lo > 0.0;
  return r;
}

std::vector<WeightStore> cascade_weights(const TrainedModel& m, uint64_t seed, float stddev) {
  const auto blocks = randomization_blocks(m);
  std::vector<WeightStore> out;
  out.reserve(blocks.size());
  WeightStore cur = m.weights;
  for (size_t k = 0; k < blocks.size(); ++k) {
    Rng rng(mix_seed(seed, k));
    for (const auto& layer : blocks[k].second) {
      for (const auto& key : {weight_key(layer), bias_key(layer)}) {
        auto& t = cur.get_mutable(key);
        for (auto& v : t.data) v = static_cast<float>(rng.truncated_normal(stddev));
      }
    }
    out.push_back(cur);
  }
  return out;
}

std::vector<std::pair<int, int>> threshold_pairs(int n_maps, int n_pairs, uint64_t seed) {
  if (n_maps < 51)
    throw ValidationError("threshold_pairs: needs at least 51 maps, got " +
                          std::to_string(n_maps));
  const int64_t max_pairs = static_cast<int64_t>(n_maps) * (n_maps - 1) / 2;
  if (n_pairs > max_pairs)
    throw ValidationError("threshold_pairs: more pairs requested than exist");
  Rng rng(seed);
  std::set<std::pair<int, int>> seen;
  std::vector<std::pair<int, int>> out;
  while (static_cast<int>(out.size()) < n_pairs) {
    int a = static_cast<int>(rng.below(static_cast<uint64_t>(n_maps)));
    int b = static_cast<int>(rng.below(static_cast<uint64_t>(n_maps)));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (seen.insert({a, b}).second) out.emplace_back(a, b);
  }
  return out;
}

SummaryStat summarize(std::span<const double> values) {
  SummaryStat s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(acc / static_cast<double>(values.size()));
  return s;
}

namespace {

double pixel_auroc(const Tensor& map, const std::vector<uint8_t>& truth) {
  std::vector<double> scores(map.data.begin(), map.data.end());
  std::vector<int> labels(truth.size());
  for (size_t i = 0; i < truth.size(); ++i) labels[i] = truth[i] ? 1 : 0;
  return roc_auc(scores, labels);
}

std::vector<double> diff(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

}  // namespace

UtilityResult utility_test(const std::vector<std::string>& image_ids,
                           const std::map<Method, std::vector<Tensor>>& method_maps,
                           const std::vector<std::vector<uint8_t>>& truths,
                           const Tensor& avg_mask, const std::vector<Tensor>& seg_maps,
                           const BootstrapParams& bp) {
  const size_t n = image_ids.size();
  if (n == 0) throw ValidationError("utility_test: needs at least one positive test image");
  if (truths.size() != n || seg_maps.size() != n)
    throw ValidationError("utility_test: input lengths disagree");

  UtilityResult r;
  r.image_ids = image_ids;
  for (size_t i = 0; i < n; ++i) {
    r.avg_auprc.push_back(auprc(avg_mask.data, truths[i]));
    r.avg_auroc.push_back(pixel_auroc(avg_mask, truths[i]));
    r.base_auprc.push_back(auprc(seg_maps[i].data, truths[i]));
    r.base_auroc.push_back(pixel_auroc(seg_maps[i], truths[i]));
  }

  int stream = 0;
  for (const auto& [method, maps] : method_maps) {
    if (maps.size() != n)
      throw ValidationError(std::string("utility_test: map count mismatch for ") +
                            method_name(method));
    MethodUtility mu;
    for (size_t i = 0; i < n; ++i) {
      mu.auprc.push_back(auprc(maps[i].data, truths[i]));
      mu.auroc.push_back(pixel_auroc(maps[i], truths[i]));
    }
    mu.vs_avg = paired_bootstrap(diff(mu.auprc, r.avg_auprc), bp.resamples,
                                 mix_seed(bp.seed, static_cast<uint64_t>(stream * 2)));
    mu.vs_base = paired_bootstrap(diff(mu.auprc, r.base_auprc), bp.resamples,
                                  mix_seed(bp.seed, static_cast<uint64_t>(stream * 2 + 1)));
    r.methods.emplace(method, std::move(mu));
    ++stream;
  }
  return r;
}

RandomizationResult randomization_eval(
    const std::vector<std::string>& image_ids, const std::vector<std::string>& blocks,
    const std::map<Method, std::vector<Tensor>>& original_maps,
    const std::vector<std::map<Method, std::vector<Tensor>>>& per_step_maps,
    const std::map<Method, std::vector<Tensor>>& threshold_pool, int n_threshold_pairs,
    uint64_t threshold_seed, const SsimConfig& ssim_cfg, double trained_auc,
    double randomized_auc, const BootstrapParams&) {
  if (per_step_maps.size() != blocks.size())
    throw ValidationError("randomization_eval: step count does not match block count");

  RandomizationResult r;
  r.image_ids = image_ids;
  r.blocks = blocks;
  r.trained_auc = trained_auc;
  r.randomized_auc = randomized_auc;

  const int pool_size = threshold_pool.empty()
                            ? 0
                            : static_cast<int>(threshold_pool.begin()->second.size());
  const auto pairs = threshold_pairs(pool_size, n_threshold_pairs, threshold_seed);

  for (const auto& [method, originals] : original_maps) {
    if (originals.size() != image_ids.size())
      throw ValidationError("randomization_eval: original map count mismatch");
    RandomizationTrace trace;

    // depth 0: the unrandomized model against itself
    std::vector<double> self_ssim;
    for (const auto& m : originals) self_ssim.push_back(ssim(m, m, ssim_cfg));
    trace.steps.push_back({"none", summarize(self_ssim)});

    for (size_t k = 0; k < per_step_maps.size(); ++k) {
      const auto it = per_step_maps[k].find(method);
      if (it == per_step_maps[k].end() || it->second.size() != originals.size())
        throw ValidationError(std::string("randomization_eval: missing step maps for ") +
                              method_name(method));
      std::vector<double> ssims;
      for (size_t i = 0; i < originals.size(); ++i)
        ssims.push_back(ssim(originals[i], it->second[i], ssim_cfg));
      trace.steps.push_back({blocks[k], summarize(ssims)});
    }

    const auto& pool = threshold_pool.at(method);
    std::vector<double> pair_ssims;
    for (const auto& [a, b] : pairs)
      pair_ssims.push_back(ssim(pool[static_cast<size_t>(a)], pool[static_cast<size_t>(b)],
                                ssim_cfg));
    trace.threshold = summarize(pair_ssims);
    trace.pass = trace.steps.back().ssim.mean < trace.threshold.mean;
    r.traces.emplace(method, std::move(trace));
  }
  return r;
}

AgreementResult agreement_eval(const std::vector<std::string>& image_ids,
                               const std::map<Method, std::vector<Tensor>>& maps_a,
                               const std::map<Method, std::vector<Tensor>>& maps_b,
                               const std::vector<Tensor>& seg_maps_1,
                               const std::vector<Tensor>& seg_maps_2,
                               const SsimConfig& ssim_cfg, const BootstrapParams& bp) {
  const size_t n = image_ids.size();
  if (seg_maps_1.size() != n || seg_maps_2.size() != n)
    throw ValidationError("agreement_eval: segmenter map count mismatch");

  AgreementResult r;
  r.image_ids = image_ids;
  for (size_t i = 0; i < n; ++i)
    r.baseline_ssim.push_back(ssim(seg_maps_1[i], seg_maps_2[i], ssim_cfg));

  int stream = 0;
  for (const auto& [method, a] : maps_a) {
    const auto itb = maps_b.find(method);
    if (itb == maps_b.end() || a.size() != n || itb->second.size() != n)
      throw ValidationError(std::string("agreement_eval: map count mismatch for ") +
                            method_name(method));
    std::vector<double> ssims;
    for (size_t i = 0; i < n; ++i) ssims.push_back(ssim(a[i], itb->second[i], ssim_cfg));
    r.vs_base.emplace(method,
                      paired_bootstrap(diff(ssims, r.baseline_ssim), bp.resamples,
                                       mix_seed(bp.seed, 100 + static_cast<uint64_t>(stream))));
    r.ssim.emplace(method, std::move(ssims));
    ++stream;
  }
  return r;
}

std::map<Method, VerdictRow> compute_grid(const UtilityResult& utility,
                                          const RandomizationResult& randomization,
                                          const AgreementResult& repeatability,
                                          const AgreementResult& reproducibility) {
  std::map<Method, VerdictRow> grid;
  for (Method m : kAllMethods) {
    const auto need = [&](const char* what, bool present) {
      if (!present)
        throw ValidationError(std::string("build_report: missing ") + what + " results for " +
                              method_name(m));
    };
    need("utility", utility.methods.count(m) > 0);
    need("randomization", randomization.traces.count(m) > 0);
    need("repeatability", repeatability.ssim.count(m) > 0);
    need("reproducibility", reproducibility.ssim.count(m) > 0);

    VerdictRow row;
    row.utility_avg = utility.methods.at(m).vs_avg.better;
    row.utility_base = utility.methods.at(m).vs_base.better;
    row.randomization = randomization.traces.at(m).pass;
    row.repeat_low = summarize(repeatability.ssim.at(m)).mean > repeatability.low_baseline;
    row.repeat_base = repeatability.vs_base.at(m).better;
    row.repro_low = summarize(reproducibility.ssim.at(m)).mean > reproducibility.low_baseline;
    row.repro_base = reproducibility.vs_base.at(m).better;
    grid.emplace(m, row);
  }
  return grid;
}

TrustReport build_report(std::string config_hash, Json config_echo, Json dataset_summary,
                         std::vector<ModelSummary> models, UtilityResult utility,
                         RandomizationResult randomization, AgreementResult repeatability,
                         AgreementResult reproducibility) {
  TrustReport r;
  r.config_hash = std::move(config_hash);
  r.config_echo = std::move(config_echo);
  r.dataset_summary = std::move(dataset_summary);
  r.models = std::move(models);
  r.utility = std::move(utility);
  r.randomization = std::move(randomization);
  r.repeatability = std::move(repeatability);
  r.reproducibility = std::move(reproducibility);
  r.grid = compute_grid(r.utility, r.randomization, r.repeatability, r.reproducibility);
  return r;
}

}  // namespace salaudit
