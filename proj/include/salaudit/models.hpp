#ifndef SALAUDIT_MODELS_HPP
#define SALAUDIT_MODELS_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "salaudit/dataset.hpp"
#include "salaudit/net.hpp"
#include "salaudit/rng.hpp"

namespace salaudit {

// arch_a: four 3x3 conv blocks (conv-relu-maxpool) widening 8..64 channels,
//         global average pool, one dense head.
// arch_b: three 5x5 conv blocks with avgpool, then two dense layers.
// Deliberately different shapes so cross-architecture comparisons mean
// something.
enum class ArchId { arch_a, arch_b };

const char* arch_name(ArchId a);
ArchId arch_from_name(const std::string& s);

// Classifiers emit one pre-sigmoid logit; the segmenter emits a per-pixel
// logit map of the input size.
Network build_classifier(ArchId arch, int image_size);
Network build_segmenter(int image_size);

struct TrainedModel {
  std::string arch;  // "arch_a", "arch_b" or "seg"
  int image_size = 0;
  Network net;
  WeightStore weights;
  uint64_t seed = 0;
  std::vector<double> val_history;  // one entry per trained epoch
  std::string val_metric;           // "auc" (max is best) or "loss" (min is best)
  int stopped_epoch = 0;            // epochs actually run
  int best_epoch = 0;               // 1-based epoch whose weights were kept
};

struct TrainOptions {
  uint64_t seed = 1;
  float lr = 1e-4f;
  int max_epochs = 20;
  int patience = 4;
  int batch_size = 16;
};

// Binary-cross-entropy training with early stopping on validation AUC; the
// returned weights are the best-validation epoch's. Deterministic in seed.
TrainedModel train_classifier(const Dataset& ds, ArchId arch, const TrainOptions& opt);

struct SegTrainOptions {
  uint64_t seed = 1;
  float lr = 1e-4f;
  int max_epochs = 15;
  int stop_patience = 15;
  int decay_patience = 3;  // lr is cut 10x when val loss stalls this long
  int batch_size = 4;
  int steps_per_epoch = 150;
};

// Focal+dice training (50/50) with balanced positive/negative sampling and
// early stopping on validation loss.
TrainedModel train_segmenter(const Dataset& ds, const SegTrainOptions& opt);

// sigmoid(logit); in (0,1).
double classify(const TrainedModel& m, const Tensor& image);

// Per-pixel sigmoid probabilities, [H,W].
Tensor segment(const TrainedModel& m, const Tensor& image);

// Classification score of a segmenter output: mean of the nonzero cells, or 0
// when every cell is zero.
double seg_score(const Tensor& prob_map);

// Mann-Whitney AUC: probability a random positive outranks a random negative,
// ties counted one half. Rejects single-class inputs.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Draws positives and negatives with equal probability (with replacement).
class BalancedSampler {
 public:
  BalancedSampler(std::vector<size_t> positives, std::vector<size_t> negatives, uint64_t seed);
  size_t draw();

 private:
  std::vector<size_t> pos_, neg_;
  Rng rng_;
};

// Ordered top-to-bottom weight blocks for cascading randomization: the dense
// head first, then conv blocks toward the input.
std::vector<std::pair<std::string, std::vector<std::string>>> randomization_blocks(
    const TrainedModel& m);

// <name>.salw weights plus a <name>.json sidecar (arch, seed, history).
void save_model(const std::filesystem::path& dir, const std::string& name,
                const TrainedModel& m);
TrainedModel load_model(const std::filesystem::path& dir, const std::string& name);

}  // namespace salaudit

#endif  // SALAUDIT_MODELS_HPP
