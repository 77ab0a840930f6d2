#ifndef SALAUDIT_PIPELINE_HPP
#define SALAUDIT_PIPELINE_HPP

#include <filesystem>
#include <functional>

#include "salaudit/config.hpp"
#include "salaudit/harness.hpp"

namespace salaudit {

// Stage layout under the run directory:
//   config.json                resolved config + hash stamp
//   dataset/                   exported dataset (external format)
//   models/<name>.salw|.json   trained weights + sidecars, plus meta.json
//   maps/<model>/<method>/<image>.salf|.pgm
//   maps/rand/step<k>/<method>/<image>.salf|.pgm
//   maps/seg_1|seg_2/<image>.salf, maps/avg_mask.salf, maps/meta.json
//   report.json, report.txt, traces/, pr/
// Stages verify the config hash of whatever they consume, so artifacts from a
// different config are refused.
void run_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_train(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_maps(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_report(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_audit(const ExperimentConfig& cfg, const std::filesystem::path& out);

// Runs fn(0..n_jobs-1) over a small thread pool. Results must go to
// per-index slots; the call rethrows the first job exception.
void parallel_for(int n_jobs, int workers, const std::function<void(int)>& fn);

int cli_run(int argc, const char* const* argv);

}  // namespace salaudit

#endif  // SALAUDIT_PIPELINE_HPP
