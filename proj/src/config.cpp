#include "salaudit/config.hpp"

#include <cinttypes>

namespace salaudit {

Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["schema"] = "salaudit-config/1";

  Json d;
  d["source"] = cfg.dataset_source;
  d["import_path"] = cfg.import_path;
  d["n"] = cfg.data.n;
  d["positive_fraction"] = cfg.data.positive_fraction;
  d["seed"] = cfg.data.seed;
  d["difficulty"] = difficulty_name(cfg.data.difficulty);
  d["flavor"] = flavor_name(cfg.data.flavor);
  d["image_size"] = cfg.data.image_size;
  j["dataset"] = d;

  Json t;
  t["arch_a_seed_1"] = cfg.arch_a_seed_1;
  t["arch_a_seed_2"] = cfg.arch_a_seed_2;
  t["arch_b_seed"] = cfg.arch_b_seed;
  t["seg_seed_1"] = cfg.seg_seed_1;
  t["seg_seed_2"] = cfg.seg_seed_2;
  Json c;
  c["lr"] = cfg.classifier.lr;
  c["max_epochs"] = cfg.classifier.max_epochs;
  c["patience"] = cfg.classifier.patience;
  c["batch_size"] = cfg.classifier.batch_size;
  t["classifier"] = c;
  Json s;
  s["lr"] = cfg.segmenter.lr;
  s["max_epochs"] = cfg.segmenter.max_epochs;
  s["stop_patience"] = cfg.segmenter.stop_patience;
  s["decay_patience"] = cfg.segmenter.decay_patience;
  s["batch_size"] = cfg.segmenter.batch_size;
  s["steps_per_epoch"] = cfg.segmenter.steps_per_epoch;
  t["segmenter"] = s;
  j["training"] = t;

  Json sal;
  sal["ig_steps"] = cfg.saliency.ig_steps;
  sal["sg_samples"] = cfg.saliency.sg_samples;
  sal["sg_noise_sigma"] = cfg.saliency.sg_noise_sigma;
  sal["gradcam_layer"] = cfg.saliency.gradcam_layer;
  sal["xrai_segment_count"] = cfg.saliency.xrai_segment_count;
  sal["noise_seed"] = cfg.saliency.noise_seed;
  j["saliency"] = sal;

  Json ss;
  ss["window"] = cfg.ssim.window;
  ss["sigma"] = cfg.ssim.sigma;
  ss["k1"] = cfg.ssim.k1;
  ss["k2"] = cfg.ssim.k2;
  j["ssim"] = ss;

  Json h;
  h["randomization_images"] = cfg.randomization_images;
  h["randomization_seed"] = cfg.randomization_seed;
  h["threshold_pairs"] = cfg.threshold_pairs;
  h["threshold_pair_seed"] = cfg.threshold_pair_seed;
  h["bootstrap_resamples"] = cfg.bootstrap_resamples;
  h["bootstrap_seed"] = cfg.bootstrap_seed;
  j["harness"] = h;

  j["workers"] = cfg.workers;
  return j;
}

namespace {

template <typename T>
T field(const Json& j, const char* section, const char* key, T fallback) {
  if (!j.contains(section)) return fallback;
  const auto& s = j.at(section);
  if (!s.contains(key)) return fallback;
  try {
    return s.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("config: ") + section + "." + key + " has the wrong type");
  }
}

}  // namespace

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  if (j.contains("schema") && j.at("schema").get<std::string>() != "salaudit-config/1")
    throw ValidationError("config: unknown schema '" + j.at("schema").get<std::string>() + "'");

  cfg.dataset_source = field<std::string>(j, "dataset", "source", cfg.dataset_source);
  cfg.import_path = field<std::string>(j, "dataset", "import_path", cfg.import_path);
  cfg.data.n = field<int>(j, "dataset", "n", cfg.data.n);
  cfg.data.positive_fraction =
      field<double>(j, "dataset", "positive_fraction", cfg.data.positive_fraction);
  cfg.data.seed = field<uint64_t>(j, "dataset", "seed", cfg.data.seed);
  cfg.data.difficulty = difficulty_from_name(
      field<std::string>(j, "dataset", "difficulty", difficulty_name(cfg.data.difficulty)));
  cfg.data.flavor = flavor_from_name(
      field<std::string>(j, "dataset", "flavor", flavor_name(cfg.data.flavor)));
  cfg.data.image_size = field<int>(j, "dataset", "image_size", cfg.data.image_size);

  const Json t = j.contains("training") ? j.at("training") : Json::object();
  cfg.arch_a_seed_1 = field<uint64_t>(j, "training", "arch_a_seed_1", cfg.arch_a_seed_1);
  cfg.arch_a_seed_2 = field<uint64_t>(j, "training", "arch_a_seed_2", cfg.arch_a_seed_2);
  cfg.arch_b_seed = field<uint64_t>(j, "training", "arch_b_seed", cfg.arch_b_seed);
  cfg.seg_seed_1 = field<uint64_t>(j, "training", "seg_seed_1", cfg.seg_seed_1);
  cfg.seg_seed_2 = field<uint64_t>(j, "training", "seg_seed_2", cfg.seg_seed_2);
  cfg.classifier.lr = field<float>(t, "classifier", "lr", cfg.classifier.lr);
  cfg.classifier.max_epochs = field<int>(t, "classifier", "max_epochs", cfg.classifier.max_epochs);
  cfg.classifier.patience = field<int>(t, "classifier", "patience", cfg.classifier.patience);
  cfg.classifier.batch_size = field<int>(t, "classifier", "batch_size", cfg.classifier.batch_size);
  cfg.segmenter.lr = field<float>(t, "segmenter", "lr", cfg.segmenter.lr);
  cfg.segmenter.max_epochs = field<int>(t, "segmenter", "max_epochs", cfg.segmenter.max_epochs);
  cfg.segmenter.stop_patience =
      field<int>(t, "segmenter", "stop_patience", cfg.segmenter.stop_patience);
  cfg.segmenter.decay_patience =
      field<int>(t, "segmenter", "decay_patience", cfg.segmenter.decay_patience);
  cfg.segmenter.batch_size = field<int>(t, "segmenter", "batch_size", cfg.segmenter.batch_size);
  cfg.segmenter.steps_per_epoch =
      field<int>(t, "segmenter", "steps_per_epoch", cfg.segmenter.steps_per_epoch);

  cfg.saliency.ig_steps = field<int>(j, "saliency", "ig_steps", cfg.saliency.ig_steps);
  cfg.saliency.sg_samples = field<int>(j, "saliency", "sg_samples", cfg.saliency.sg_samples);
  cfg.saliency.sg_noise_sigma =
      field<float>(j, "saliency", "sg_noise_sigma", cfg.saliency.sg_noise_sigma);
  cfg.saliency.gradcam_layer =
      field<std::string>(j, "saliency", "gradcam_layer", cfg.saliency.gradcam_layer);
  cfg.saliency.xrai_segment_count =
      field<int>(j, "saliency", "xrai_segment_count", cfg.saliency.xrai_segment_count);
  cfg.saliency.noise_seed = field<uint64_t>(j, "saliency", "noise_seed", cfg.saliency.noise_seed);

  cfg.ssim.window = field<int>(j, "ssim", "window", cfg.ssim.window);
  cfg.ssim.sigma = field<double>(j, "ssim", "sigma", cfg.ssim.sigma);
  cfg.ssim.k1 = field<double>(j, "ssim", "k1", cfg.ssim.k1);
  cfg.ssim.k2 = field<double>(j, "ssim", "k2", cfg.ssim.k2);

  cfg.randomization_images =
      field<int>(j, "harness", "randomization_images", cfg.randomization_images);
  cfg.randomization_seed =
      field<uint64_t>(j, "harness", "randomization_seed", cfg.randomization_seed);
  cfg.threshold_pairs = field<int>(j, "harness", "threshold_pairs", cfg.threshold_pairs);
  cfg.threshold_pair_seed =
      field<uint64_t>(j, "harness", "threshold_pair_seed", cfg.threshold_pair_seed);
  cfg.bootstrap_resamples =
      field<int>(j, "harness", "bootstrap_resamples", cfg.bootstrap_resamples);
  cfg.bootstrap_seed = field<uint64_t>(j, "harness", "bootstrap_seed", cfg.bootstrap_seed);

  cfg.workers = j.value("workers", cfg.workers);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_json_file(path));
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.dataset_source != "generate" && cfg.dataset_source != "import")
    throw ValidationError("config: dataset.source must be 'generate' or 'import'");
  if (cfg.dataset_source == "import" && cfg.import_path.empty())
    throw ValidationError("config: dataset.import_path is required when dataset.source is 'import'");
  if (cfg.dataset_source == "generate") {
    if (cfg.data.n < 100) throw ValidationError("config: dataset.n must be >= 100");
    if (!(cfg.data.positive_fraction > 0.0 && cfg.data.positive_fraction < 1.0))
      throw ValidationError("config: dataset.positive_fraction must lie in (0, 1)");
  }
  cfg.saliency.validate();
  if (cfg.ssim.window < 3 || cfg.ssim.window % 2 == 0)
    throw ValidationError("config: ssim.window must be an odd size >= 3");
  if (cfg.randomization_images < 1)
    throw ValidationError("config: harness.randomization_images must be >= 1");
  if (cfg.threshold_pairs < 1)
    throw ValidationError("config: harness.threshold_pairs must be >= 1");
  if (cfg.bootstrap_resamples < 100)
    throw ValidationError("config: harness.bootstrap_resamples must be >= 100");
  if (cfg.workers < 0) throw ValidationError("config: workers must be >= 0");
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string dump = config_to_json(cfg).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace salaudit
