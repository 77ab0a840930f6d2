#ifndef SALAUDIT_HARNESS_HPP
#define SALAUDIT_HARNESS_HPP

#include <map>
#include <span>
#include <string>
#include <vector>

#include "salaudit/config.hpp"
#include "salaudit/metrics.hpp"
#include "salaudit/models.hpp"
#include "salaudit/saliency.hpp"

namespace salaudit {

struct BootstrapResult {
  double mean = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool better = false;  // the whole 95% CI of the mean difference sits above 0
};

// Percentile bootstrap over the mean of paired differences. Needs at least
// 20 pairs; deterministic in seed.
BootstrapResult paired_bootstrap(std::span<const double> diffs, int n_resamples, uint64_t seed);

// Cumulative top-to-bottom weight randomization: element k of the result
// differs from element k-1 only in block k, whose parameters are redrawn from
// a truncated normal. Element 0 is the first randomized store (logits block).
std::vector<WeightStore> cascade_weights(const TrainedModel& m, uint64_t seed,
                                         float stddev = 0.05f);

// n_pairs distinct unordered index pairs over [0, n_maps). The degradation
// threshold needs a healthy pool, so fewer than 51 maps are rejected.
std::vector<std::pair<int, int>> threshold_pairs(int n_maps, int n_pairs, uint64_t seed);

struct SummaryStat {
  double mean = 0.0;
  double stddev = 0.0;
};

SummaryStat summarize(std::span<const double> values);

// --- result containers -----------------------------------------------------

struct MethodUtility {
  std::vector<double> auprc;  // per positive test image
  std::vector<double> auroc;
  BootstrapResult vs_avg;
  BootstrapResult vs_base;
};

struct UtilityResult {
  std::vector<std::string> image_ids;
  std::map<Method, MethodUtility> methods;
  std::vector<double> avg_auprc, avg_auroc;    // constant average-mask baseline
  std::vector<double> base_auprc, base_auroc;  // trained segmenter baseline
};

struct RandomizationStep {
  std::string block;
  SummaryStat ssim;
};

struct RandomizationTrace {
  std::vector<RandomizationStep> steps;  // steps[0] is depth 0 (nothing randomized)
  SummaryStat threshold;                 // mean SSIM of random original-map pairs
  bool pass = false;                     // fully randomized mean < threshold
};

struct RandomizationResult {
  std::vector<std::string> image_ids;
  std::vector<std::string> blocks;  // top to bottom
  double trained_auc = 0.0;
  double randomized_auc = 0.0;  // fully randomized model on the test split
  std::map<Method, RandomizationTrace> traces;
};

// Shared shape of the repeatability (same arch) and reproducibility
// (different arch) comparisons.
struct AgreementResult {
  std::vector<std::string> image_ids;
  std::map<Method, std::vector<double>> ssim;  // per image
  std::vector<double> baseline_ssim;           // segmenter replicate pair, per image
  std::map<Method, BootstrapResult> vs_base;
  double low_baseline = 0.5;
};

// --- computations over precomputed maps ------------------------------------

struct BootstrapParams {
  int resamples = 10000;
  uint64_t seed = 303;
};

// AUPRC/AUROC of every method map, the constant average-mask baseline and the
// segmenter output against each image's ground truth, plus paired-bootstrap
// verdicts of method vs each baseline.
UtilityResult utility_test(const std::vector<std::string>& image_ids,
                           const std::map<Method, std::vector<Tensor>>& method_maps,
                           const std::vector<std::vector<uint8_t>>& truths,
                           const Tensor& avg_mask, const std::vector<Tensor>& seg_maps,
                           const BootstrapParams& bp);

// SSIM traces against the original maps plus per-method degradation
// thresholds sampled from random original-map pairs.
RandomizationResult randomization_eval(
    const std::vector<std::string>& image_ids, const std::vector<std::string>& blocks,
    const std::map<Method, std::vector<Tensor>>& original_maps,
    const std::vector<std::map<Method, std::vector<Tensor>>>& per_step_maps,
    const std::map<Method, std::vector<Tensor>>& threshold_pool, int n_threshold_pairs,
    uint64_t threshold_seed, const SsimConfig& ssim_cfg, double trained_auc,
    double randomized_auc, const BootstrapParams& bp);

// Per-image SSIM between two models' maps, with the segmenter replicate pair
// as the high baseline.
AgreementResult agreement_eval(const std::vector<std::string>& image_ids,
                               const std::map<Method, std::vector<Tensor>>& maps_a,
                               const std::map<Method, std::vector<Tensor>>& maps_b,
                               const std::vector<Tensor>& seg_maps_1,
                               const std::vector<Tensor>& seg_maps_2,
                               const SsimConfig& ssim_cfg, const BootstrapParams& bp);

// --- report -----------------------------------------------------------------

struct ModelSummary {
  std::string name;
  std::string arch;
  uint64_t seed = 0;
  int stopped_epoch = 0;
  int best_epoch = 0;
  double best_val = 0.0;
  std::string val_metric;
  double test_auc = 0.0;
};

struct VerdictRow {
  bool utility_avg = false;
  bool utility_base = false;
  bool randomization = false;
  bool repeat_low = false;
  bool repeat_base = false;
  bool repro_low = false;
  bool repro_base = false;
};

struct TrustReport {
  std::string config_hash;
  Json config_echo;
  Json dataset_summary;
  std::vector<ModelSummary> models;
  UtilityResult utility;
  RandomizationResult randomization;
  AgreementResult repeatability;
  AgreementResult reproducibility;
  std::map<Method, VerdictRow> grid;
};

// Recomputes the PASS/FAIL grid from the stored statistics; rejects missing
// pieces by name.
TrustReport build_report(std::string config_hash, Json config_echo, Json dataset_summary,
                         std::vector<ModelSummary> models, UtilityResult utility,
                         RandomizationResult randomization, AgreementResult repeatability,
                         AgreementResult reproducibility);

std::map<Method, VerdictRow> compute_grid(const UtilityResult& utility,
                                          const RandomizationResult& randomization,
                                          const AgreementResult& repeatability,
                                          const AgreementResult& reproducibility);

Json report_to_json(const TrustReport& r);
std::string report_to_text(const TrustReport& r);
std::string trace_to_csv(const RandomizationResult& r, Method m);
std::string trace_to_svg(const RandomizationResult& r, Method m);
std::string pr_curve_to_csv(const PRCurve& curve);

}  // namespace salaudit

#endif  // SALAUDIT_HARNESS_HPP
