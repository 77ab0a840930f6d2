#ifndef SALAUDIT_DATASET_HPP
#define SALAUDIT_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "salaudit/tensor.hpp"

namespace salaudit {

enum class Split { train, val, test };
enum class Difficulty { easy, medium, hard };

// "segmentation" evaluates against the lesion masks, "detection" against the
// rasterized bounding boxes. Generated samples always carry both.
enum class Flavor { segmentation, detection };

const char* split_name(Split s);
const char* difficulty_name(Difficulty d);
const char* flavor_name(Flavor f);
Difficulty difficulty_from_name(const std::string& s);
Flavor flavor_from_name(const std::string& s);

struct Box {
  int x = 0, y = 0, w = 0, h = 0;
};

struct Sample {
  std::string id;
  Tensor image;               // [1,H,W], values k/255 in [0,1]
  int label = 0;              // 1 iff a lesion is present
  std::vector<uint8_t> mask;  // H*W row-major, nonzero exactly on lesion support
  std::vector<Box> boxes;     // tight per-lesion bounds, empty iff label 0
};

struct GenParams {
  int n = 1000;
  double positive_fraction = 0.22;
  uint64_t seed = 1;
  Difficulty difficulty = Difficulty::easy;
  Flavor flavor = Flavor::segmentation;
  int image_size = 64;
};

struct SplitCounts {
  int total = 0;
  int positives = 0;
};

struct DatasetManifest {
  GenParams params;
  std::vector<Split> split_of;  // by sample index
  SplitCounts counts[3];
};

struct Dataset {
  std::vector<Sample> samples;
  DatasetManifest manifest;

  std::vector<size_t> indices(Split s) const;
  std::vector<size_t> positive_indices(Split s) const;
  int image_size() const { return manifest.params.image_size; }
};

// Deterministic synthetic radiograph-like data: a zero-mean textured
// background (smooth low-frequency field plus periodic bands) with one or two
// irregular low-contrast lesions on positive samples. Split 81:9:10,
// stratified by label. Pure function of params.
Dataset generate(const GenParams& params);

// Ground truth used for pixel metrics under the given flavor.
std::vector<uint8_t> truth_mask(const Sample& s, Flavor flavor, int image_size);

// Pixelwise mean over the positive train+val ground truths; the constant
// input-independent baseline map.
Tensor average_mask(const Dataset& ds);

// Directory layout: manifest.json, images/<id>.pgm, masks/<id>.pgm for
// positives, boxes.csv with sample_id,x,y,w,h rows.
void export_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace salaudit

#endif  // SALAUDIT_DATASET_HPP
