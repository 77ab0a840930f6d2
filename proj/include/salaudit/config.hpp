#ifndef SALAUDIT_CONFIG_HPP
#define SALAUDIT_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "salaudit/dataset.hpp"
#include "salaudit/metrics.hpp"
#include "salaudit/models.hpp"
#include "salaudit/saliency.hpp"
#include "salaudit/serialize.hpp"

namespace salaudit {

// Everything a run depends on. A config file alone reproduces a run byte for
// byte; every stage artifact carries the config hash so stale mixes are
// refused.
struct ExperimentConfig {
  std::string dataset_source = "generate";  // "generate" | "import"
  std::string import_path;
  GenParams data;

  uint64_t arch_a_seed_1 = 11;
  uint64_t arch_a_seed_2 = 12;
  uint64_t arch_b_seed = 13;
  uint64_t seg_seed_1 = 21;
  uint64_t seg_seed_2 = 22;
  TrainOptions classifier;
  SegTrainOptions segmenter;

  SaliencyConfig saliency;
  SsimConfig ssim;

  int randomization_images = 64;
  uint64_t randomization_seed = 301;
  int threshold_pairs = 50;
  uint64_t threshold_pair_seed = 302;
  int bootstrap_resamples = 10000;
  uint64_t bootstrap_seed = 303;

  int workers = 0;  // 0 = all hardware threads
};

Json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// Structural validation with field-level diagnostics.
void validate_config(const ExperimentConfig& cfg);

// FNV-1a of the canonical JSON dump, as fixed-width hex.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace salaudit

#endif  // SALAUDIT_CONFIG_HPP
