#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "salaudit/pipeline.hpp"

namespace salaudit {

int cli_run(int argc, const char* const* argv) {
  CLI::App app{"saliency-map trust audit toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  uint64_t seed_override = 0;
  bool seed_set = false;
  int workers_override = -1;

  auto add_common = [&](CLI::App* sub, bool with_workers) {
    sub->add_option("--config", config_path, "experiment config JSON")->required();
    sub->add_option("--out", out_dir, "run output directory")->required();
    sub->add_option("--seed", seed_override, "override dataset.seed")
        ->each([&](const std::string&) { seed_set = true; });
    if (with_workers)
      sub->add_option("--workers", workers_override, "map computation workers (0 = all cores)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate or import the dataset");
  CLI::App* train = app.add_subcommand("train", "train classifiers and segmenters");
  CLI::App* maps = app.add_subcommand("maps", "compute and store all saliency maps");
  CLI::App* report = app.add_subcommand("report", "evaluate the four tests and write reports");
  CLI::App* audit = app.add_subcommand("audit", "full pipeline: gen-data, train, maps, report");
  add_common(gen, false);
  add_common(train, false);
  add_common(maps, true);
  add_common(report, false);
  add_common(audit, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    ExperimentConfig cfg = load_config(config_path);
    if (seed_set) cfg.data.seed = seed_override;
    if (workers_override >= 0) cfg.workers = workers_override;
    validate_config(cfg);

    if (gen->parsed()) run_gen_data(cfg, out_dir);
    if (train->parsed()) run_train(cfg, out_dir);
    if (maps->parsed()) run_maps(cfg, out_dir);
    if (report->parsed()) run_report(cfg, out_dir);
    if (audit->parsed()) run_audit(cfg, out_dir);
    return 0;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}

}  // namespace salaudit
