#include "salaudit/pipeline.hpp"

#include <atomic>
#include <mutex>
#include <thread>

#include "salaudit/ops.hpp"
#include "salaudit/rng.hpp"
#include "salaudit/serialize.hpp"

namespace salaudit {

void parallel_for(int n_jobs, int workers, const std::function<void(int)>& fn) {
  if (n_jobs <= 0) return;
  workers = std::max(1, std::min(workers, n_jobs));
  if (workers == 1) {
    for (int i = 0; i < n_jobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_jobs) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

namespace fs = std::filesystem;

int resolve_workers(const ExperimentConfig& cfg) {
  if (cfg.workers > 0) return cfg.workers;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void stamp_config(const ExperimentConfig& cfg, const fs::path& out) {
  const std::string hash = config_hash(cfg);
  const fs::path file = out / "config.json";
  if (fs::exists(file)) {
    const Json j = read_json_file(file);
    if (j.value("config_hash", "") != hash)
      throw ValidationError(file.string() + ": existing run was produced by a different config (" +
                            j.value("config_hash", "?") + " vs " + hash + ")");
    return;
  }
  Json j;
  j["schema"] = "salaudit-run/1";
  j["config_hash"] = hash;
  j["config"] = config_to_json(cfg);
  write_json_file(file, j);
}

void check_stage_hash(const ExperimentConfig& cfg, const fs::path& meta_file) {
  const Json j = read_json_file(meta_file);
  if (j.value("config_hash", "") != config_hash(cfg))
    throw ValidationError(meta_file.string() + ": produced by config " +
                          j.value("config_hash", "?") + ", current config is " +
                          config_hash(cfg) + "; refusing to mix runs");
}

const char* kClassifierNames[3] = {"arch_a_1", "arch_a_2", "arch_b"};

struct LoadedRun {
  Dataset ds;
  std::vector<std::string> test_pos_ids;
  std::vector<size_t> test_pos_idx;
};

LoadedRun load_dataset_stage(const ExperimentConfig& cfg, const fs::path& out) {
  check_stage_hash(cfg, out / "dataset_meta.json");
  LoadedRun run;
  run.ds = import_dataset(out / "dataset");
  run.test_pos_idx = run.ds.positive_indices(Split::test);
  for (size_t i : run.test_pos_idx) run.test_pos_ids.push_back(run.ds.samples[i].id);
  return run;
}

double classifier_test_auc(const TrainedModel& m, const Dataset& ds) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (size_t i : ds.indices(Split::test)) {
    scores.push_back(classify(m, ds.samples[i].image));
    labels.push_back(ds.samples[i].label);
  }
  return roc_auc(scores, labels);
}

double segmenter_test_auc(const TrainedModel& m, const Dataset& ds) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (size_t i : ds.indices(Split::test)) {
    scores.push_back(seg_score(segment(m, ds.samples[i].image)));
    labels.push_back(ds.samples[i].label);
  }
  return roc_auc(scores, labels);
}

// All eight maps for every listed image, computed in parallel, written in
// deterministic order.
void write_method_maps(const Network& net, const WeightStore& weights,
                       const std::vector<const Sample*>& samples, const SaliencyConfig& sal,
                       const fs::path& dir, int workers) {
  std::vector<std::map<Method, Tensor>> results(samples.size());
  parallel_for(static_cast<int>(samples.size()), workers, [&](int i) {
    auto& slot = results[static_cast<size_t>(i)];
    for (Method m : kAllMethods)
      slot.emplace(m, compute_map(m, net, weights, samples[static_cast<size_t>(i)]->image, sal,
                                  samples[static_cast<size_t>(i)]->id)
                          .values);
  });
  for (size_t i = 0; i < samples.size(); ++i) {
    for (Method m : kAllMethods) {
      const fs::path base = dir / method_name(m) / samples[i]->id;
      salf_write(base.string() + ".salf", results[i].at(m));
      map_pgm_write(base.string() + ".pgm", results[i].at(m));
    }
  }
}

std::map<Method, std::vector<Tensor>> load_method_maps(const fs::path& dir,
                                                       const std::vector<std::string>& ids) {
  std::map<Method, std::vector<Tensor>> maps;
  for (Method m : kAllMethods) {
    std::vector<Tensor> v;
    v.reserve(ids.size());
    for (const auto& id : ids) v.push_back(salf_read(dir / method_name(m) / (id + ".salf")));
    maps.emplace(m, std::move(v));
  }
  return maps;
}

std::vector<Tensor> load_plain_maps(const fs::path& dir, const std::vector<std::string>& ids) {
  std::vector<Tensor> v;
  v.reserve(ids.size());
  for (const auto& id : ids) v.push_back(salf_read(dir / (id + ".salf")));
  return v;
}

}  // namespace

void run_gen_data(const ExperimentConfig& cfg, const fs::path& out) {
  validate_config(cfg);
  fs::create_directories(out);
  stamp_config(cfg, out);

  Dataset ds = cfg.dataset_source == "import" ? import_dataset(cfg.import_path)
                                              : generate(cfg.data);
  export_dataset(ds, out / "dataset");
  Json meta;
  meta["config_hash"] = config_hash(cfg);
  meta["n"] = static_cast<int>(ds.samples.size());
  write_json_file(out / "dataset_meta.json", meta);
}

void run_train(const ExperimentConfig& cfg, const fs::path& out) {
  validate_config(cfg);
  stamp_config(cfg, out);
  LoadedRun run = load_dataset_stage(cfg, out);
  const fs::path mdir = out / "models";

  Json meta;
  meta["config_hash"] = config_hash(cfg);

  const uint64_t cls_seeds[3] = {cfg.arch_a_seed_1, cfg.arch_a_seed_2, cfg.arch_b_seed};
  const ArchId archs[3] = {ArchId::arch_a, ArchId::arch_a, ArchId::arch_b};
  for (int i = 0; i < 3; ++i) {
    TrainOptions opt = cfg.classifier;
    opt.seed = cls_seeds[i];
    TrainedModel m = train_classifier(run.ds, archs[i], opt);
    save_model(mdir, kClassifierNames[i], m);
    meta["test_auc"][kClassifierNames[i]] = classifier_test_auc(m, run.ds);
  }
  const uint64_t seg_seeds[2] = {cfg.seg_seed_1, cfg.seg_seed_2};
  for (int i = 0; i < 2; ++i) {
    SegTrainOptions opt = cfg.segmenter;
    opt.seed = seg_seeds[i];
    TrainedModel m = train_segmenter(run.ds, opt);
    const std::string name = "seg_" + std::to_string(i + 1);
    save_model(mdir, name, m);
    meta["test_auc"][name] = segmenter_test_auc(m, run.ds);
  }
  write_json_file(out / "models" / "meta.json", meta);
}

void run_maps(const ExperimentConfig& cfg, const fs::path& out) {
  validate_config(cfg);
  stamp_config(cfg, out);
  LoadedRun run = load_dataset_stage(cfg, out);
  check_stage_hash(cfg, out / "models" / "meta.json");
  const Json models_meta = read_json_file(out / "models" / "meta.json");
  const int workers = resolve_workers(cfg);
  const fs::path mapdir = out / "maps";

  std::vector<const Sample*> test_pos;
  for (size_t i : run.test_pos_idx) test_pos.push_back(&run.ds.samples[i]);
  if (test_pos.empty()) throw ValidationError("maps: test split has no positive samples");

  // originals for the three classifiers
  for (const char* name : kClassifierNames) {
    const TrainedModel m = load_model(out / "models", name);
    write_method_maps(m.net, m.weights, test_pos, cfg.saliency, mapdir / name, workers);
  }

  // segmenter probability maps and the average-mask baseline
  for (const char* name : {"seg_1", "seg_2"}) {
    const TrainedModel m = load_model(out / "models", name);
    std::vector<Tensor> probs(test_pos.size());
    parallel_for(static_cast<int>(test_pos.size()), workers, [&](int i) {
      probs[static_cast<size_t>(i)] = segment(m, test_pos[static_cast<size_t>(i)]->image);
    });
    for (size_t i = 0; i < test_pos.size(); ++i)
      salf_write(mapdir / name / (test_pos[i]->id + ".salf"), probs[i]);
  }
  salf_write(mapdir / "avg_mask.salf", average_mask(run.ds));

  // cascading randomization on the primary classifier
  const TrainedModel primary = load_model(out / "models", kClassifierNames[0]);
  const auto blocks = randomization_blocks(primary);
  const auto stores = cascade_weights(primary, cfg.randomization_seed);

  std::vector<size_t> rand_subsample(run.test_pos_idx.size());
  for (size_t i = 0; i < rand_subsample.size(); ++i) rand_subsample[i] = i;
  {
    Rng rng(mix_seed(cfg.randomization_seed, 0xabc));
    for (size_t i = rand_subsample.size(); i > 1; --i)
      std::swap(rand_subsample[i - 1], rand_subsample[rng.below(i)]);
    const size_t want = std::min<size_t>(static_cast<size_t>(cfg.randomization_images),
                                         rand_subsample.size());
    rand_subsample.resize(want);
    std::sort(rand_subsample.begin(), rand_subsample.end());
  }
  std::vector<const Sample*> rand_images;
  Json rand_ids = Json::array();
  for (size_t i : rand_subsample) {
    rand_images.push_back(test_pos[i]);
    rand_ids.push_back(test_pos[i]->id);
  }

  for (size_t k = 0; k < stores.size(); ++k)
    write_method_maps(primary.net, stores[k], rand_images, cfg.saliency,
                      mapdir / "rand" / ("step" + std::to_string(k + 1)), workers);

  // sanity AUC of the fully randomized model
  TrainedModel randomized = primary;
  randomized.weights = stores.back();
  const double randomized_auc = classifier_test_auc(randomized, run.ds);

  Json meta;
  meta["config_hash"] = config_hash(cfg);
  meta["test_pos_ids"] = run.test_pos_ids;
  meta["rand_ids"] = rand_ids;
  Json jblocks = Json::array();
  for (const auto& b : blocks) jblocks.push_back(b.first);
  meta["blocks"] = jblocks;
  meta["trained_auc"] = models_meta.at("test_auc").at(kClassifierNames[0]).get<double>();
  meta["randomized_auc"] = randomized_auc;
  write_json_file(mapdir / "meta.json", meta);
}

void run_report(const ExperimentConfig& cfg, const fs::path& out) {
  validate_config(cfg);
  stamp_config(cfg, out);
  LoadedRun run = load_dataset_stage(cfg, out);
  check_stage_hash(cfg, out / "models" / "meta.json");
  check_stage_hash(cfg, out / "maps" / "meta.json");
  const Json models_meta = read_json_file(out / "models" / "meta.json");
  const Json maps_meta = read_json_file(out / "maps" / "meta.json");
  const fs::path mapdir = out / "maps";

  const auto ids = maps_meta.at("test_pos_ids").get<std::vector<std::string>>();
  if (ids != run.test_pos_ids)
    throw ValidationError("report: map stage image list does not match the dataset");

  std::vector<std::vector<uint8_t>> truths;
  for (size_t i : run.test_pos_idx)
    truths.push_back(truth_mask(run.ds.samples[i], run.ds.manifest.params.flavor,
                                run.ds.image_size()));

  const auto maps_a1 = load_method_maps(mapdir / "arch_a_1", ids);
  const auto maps_a2 = load_method_maps(mapdir / "arch_a_2", ids);
  const auto maps_b = load_method_maps(mapdir / "arch_b", ids);
  const auto seg1 = load_plain_maps(mapdir / "seg_1", ids);
  const auto seg2 = load_plain_maps(mapdir / "seg_2", ids);
  const Tensor avg = salf_read(mapdir / "avg_mask.salf");

  const BootstrapParams bp{cfg.bootstrap_resamples, cfg.bootstrap_seed};
  UtilityResult utility = utility_test(ids, maps_a1, truths, avg, seg1, bp);

  // randomization: originals restricted to the sampled subset
  const auto rand_ids = maps_meta.at("rand_ids").get<std::vector<std::string>>();
  const auto blocks = maps_meta.at("blocks").get<std::vector<std::string>>();
  std::map<Method, std::vector<Tensor>> rand_originals;
  {
    std::vector<size_t> pos_of_id;
    for (const auto& rid : rand_ids) {
      const auto it = std::find(ids.begin(), ids.end(), rid);
      if (it == ids.end())
        throw ValidationError("report: randomization image " + rid + " not in the map set");
      pos_of_id.push_back(static_cast<size_t>(it - ids.begin()));
    }
    for (const auto& [m, maps] : maps_a1) {
      std::vector<Tensor> sub;
      for (size_t p : pos_of_id) sub.push_back(maps[p]);
      rand_originals.emplace(m, std::move(sub));
    }
  }
  std::vector<std::map<Method, std::vector<Tensor>>> per_step;
  for (size_t k = 0; k < blocks.size(); ++k)
    per_step.push_back(load_method_maps(mapdir / "rand" / ("step" + std::to_string(k + 1)),
                                        rand_ids));
  RandomizationResult randomization = randomization_eval(
      rand_ids, blocks, rand_originals, per_step, maps_a1, cfg.threshold_pairs,
      cfg.threshold_pair_seed, cfg.ssim, maps_meta.at("trained_auc").get<double>(),
      maps_meta.at("randomized_auc").get<double>(), bp);

  AgreementResult repeatability =
      agreement_eval(ids, maps_a1, maps_a2, seg1, seg2, cfg.ssim, bp);
  AgreementResult reproducibility =
      agreement_eval(ids, maps_a1, maps_b, seg1, seg2, cfg.ssim, bp);

  std::vector<ModelSummary> models;
  for (const char* name : {"arch_a_1", "arch_a_2", "arch_b", "seg_1", "seg_2"}) {
    const TrainedModel m = load_model(out / "models", name);
    ModelSummary s;
    s.name = name;
    s.arch = m.arch;
    s.seed = m.seed;
    s.stopped_epoch = m.stopped_epoch;
    s.best_epoch = m.best_epoch;
    s.val_metric = m.val_metric;
    s.best_val = m.val_history.at(static_cast<size_t>(m.best_epoch - 1));
    s.test_auc = models_meta.at("test_auc").at(name).get<double>();
    models.push_back(std::move(s));
  }

  Json dataset_summary;
  dataset_summary["flavor"] = flavor_name(run.ds.manifest.params.flavor);
  dataset_summary["difficulty"] = difficulty_name(run.ds.manifest.params.difficulty);
  dataset_summary["n"] = static_cast<int>(run.ds.samples.size());
  dataset_summary["image_size"] = run.ds.image_size();
  for (int sp = 0; sp < 3; ++sp) {
    const auto s = static_cast<Split>(sp);
    dataset_summary["counts"][split_name(s)]["total"] = run.ds.manifest.counts[sp].total;
    dataset_summary["counts"][split_name(s)]["positives"] = run.ds.manifest.counts[sp].positives;
  }
  dataset_summary["test_positives"] = static_cast<int>(ids.size());

  TrustReport report = build_report(config_hash(cfg), config_to_json(cfg), dataset_summary,
                                    std::move(models), std::move(utility),
                                    std::move(randomization), std::move(repeatability),
                                    std::move(reproducibility));

  write_json_file(out / "report.json", report_to_json(report));
  write_text_file(out / "report.txt", report_to_text(report));
  for (Method m : kAllMethods) {
    write_text_file(out / "traces" / (std::string(method_name(m)) + ".csv"),
                    trace_to_csv(report.randomization, m));
    write_text_file(out / "traces" / (std::string(method_name(m)) + ".svg"),
                    trace_to_svg(report.randomization, m));
  }
  // a few example per-image PR curves per method plus the two baselines
  const size_t n_pr = std::min<size_t>(3, ids.size());
  for (size_t i = 0; i < n_pr; ++i) {
    for (Method m : kAllMethods)
      write_text_file(out / "pr" / (std::string(method_name(m)) + "_" + ids[i] + ".csv"),
                      pr_curve_to_csv(pr_curve(maps_a1.at(m)[i].data, truths[i])));
    write_text_file(out / "pr" / ("avg_" + ids[i] + ".csv"),
                    pr_curve_to_csv(pr_curve(avg.data, truths[i])));
    write_text_file(out / "pr" / ("base_" + ids[i] + ".csv"),
                    pr_curve_to_csv(pr_curve(seg1[i].data, truths[i])));
  }
}

void run_audit(const ExperimentConfig& cfg, const fs::path& out) {
  run_gen_data(cfg, out);
  run_train(cfg, out);
  run_maps(cfg, out);
  run_report(cfg, out);
}

}  // namespace salaudit
