#include <cmath>
#include <sstream>

#include "salaudit/harness.hpp"

namespace salaudit {

namespace {

Json stat_json(const SummaryStat& s) {
  Json j;
  j["mean"] = s.mean;
  j["std"] = s.stddev;
  return j;
}

Json bootstrap_json(const BootstrapResult& b) {
  Json j;
  j["mean_diff"] = b.mean;
  j["ci95"] = {b.ci_lo, b.ci_hi};
  j["better"] = b.better;
  return j;
}

const char* verdict(bool pass) { return pass ? "PASS" : "FAIL"; }

constexpr const char* kColumns[7] = {
    "utility_avg",  "utility_base", "randomization", "repeatability_low",
    "repeatability_base", "reproducibility_low", "reproducibility_base"};

Json agreement_json(const AgreementResult& a) {
  Json j;
  j["image_ids"] = a.image_ids;
  j["low_baseline"] = a.low_baseline;
  j["segmenter_pair"] = stat_json(summarize(a.baseline_ssim));
  Json methods;
  for (const auto& [m, ssims] : a.ssim) {
    Json mj;
    mj["ssim"] = stat_json(summarize(ssims));
    mj["vs_low_pass"] = summarize(ssims).mean > a.low_baseline;
    mj["vs_base"] = bootstrap_json(a.vs_base.at(m));
    mj["per_image_ssim"] = ssims;
    methods[method_name(m)] = mj;
  }
  j["methods"] = methods;
  return j;
}

}  // namespace

Json report_to_json(const TrustReport& r) {
  Json j;
  j["schema"] = "trust-report/1";
  j["config_hash"] = r.config_hash;
  j["config"] = r.config_echo;
  j["dataset"] = r.dataset_summary;

  Json models = Json::array();
  for (const auto& m : r.models) {
    Json mj;
    mj["name"] = m.name;
    mj["arch"] = m.arch;
    mj["seed"] = m.seed;
    mj["stopped_epoch"] = m.stopped_epoch;
    mj["best_epoch"] = m.best_epoch;
    mj["val_metric"] = m.val_metric;
    mj["best_val"] = m.best_val;
    mj["test_auc"] = m.test_auc;
    models.push_back(mj);
  }
  j["models"] = models;

  Json u;
  u["image_ids"] = r.utility.image_ids;
  Json baselines;
  baselines["avg_mask"]["auprc"] = stat_json(summarize(r.utility.avg_auprc));
  baselines["avg_mask"]["auroc"] = stat_json(summarize(r.utility.avg_auroc));
  baselines["segmenter"]["auprc"] = stat_json(summarize(r.utility.base_auprc));
  baselines["segmenter"]["auroc"] = stat_json(summarize(r.utility.base_auroc));
  u["baselines"] = baselines;
  Json umethods;
  for (const auto& [m, mu] : r.utility.methods) {
    Json mj;
    mj["auprc"] = stat_json(summarize(mu.auprc));
    mj["auroc"] = stat_json(summarize(mu.auroc));
    mj["vs_avg"] = bootstrap_json(mu.vs_avg);
    mj["vs_base"] = bootstrap_json(mu.vs_base);
    mj["per_image_auprc"] = mu.auprc;
    umethods[method_name(m)] = mj;
  }
  u["methods"] = umethods;
  j["utility"] = u;

  Json rnd;
  rnd["image_ids"] = r.randomization.image_ids;
  rnd["blocks"] = r.randomization.blocks;
  rnd["trained_auc"] = r.randomization.trained_auc;
  rnd["randomized_auc"] = r.randomization.randomized_auc;
  Json traces;
  for (const auto& [m, t] : r.randomization.traces) {
    Json tj;
    tj["threshold"] = stat_json(t.threshold);
    Json steps = Json::array();
    for (const auto& s : t.steps) {
      Json sj;
      sj["block"] = s.block;
      sj["ssim"] = stat_json(s.ssim);
      steps.push_back(sj);
    }
    tj["steps"] = steps;
    tj["pass"] = t.pass;
    traces[method_name(m)] = tj;
  }
  rnd["traces"] = traces;
  j["randomization"] = rnd;

  j["repeatability"] = agreement_json(r.repeatability);
  j["reproducibility"] = agreement_json(r.reproducibility);

  Json grid;
  for (const auto& [m, row] : r.grid) {
    Json g;
    g[kColumns[0]] = verdict(row.utility_avg);
    g[kColumns[1]] = verdict(row.utility_base);
    g[kColumns[2]] = verdict(row.randomization);
    g[kColumns[3]] = verdict(row.repeat_low);
    g[kColumns[4]] = verdict(row.repeat_base);
    g[kColumns[5]] = verdict(row.repro_low);
    g[kColumns[6]] = verdict(row.repro_base);
    grid[method_name(m)] = g;
  }
  j["grid"] = grid;
  j["grid_columns"] = Json::array({kColumns[0], kColumns[1], kColumns[2], kColumns[3],
                                   kColumns[4], kColumns[5], kColumns[6]});
  return j;
}

std::string report_to_text(const TrustReport& r) {
  std::ostringstream out;
  out << "saliency trust audit\n";
  out << "====================\n";
  out << "config hash: " << r.config_hash << "\n";
  out << "dataset: " << r.dataset_summary.value("flavor", "?") << " flavor, n="
      << r.dataset_summary.value("n", 0) << ", image " << r.dataset_summary.value("image_size", 0)
      << "px, test positives: " << r.dataset_summary.value("test_positives", 0) << "\n";
  const auto& s = r.config_echo.value("saliency", Json::object());
  out << "map settings: ig_steps=" << s.value("ig_steps", 0)
      << " sg_samples=" << s.value("sg_samples", 0)
      << " sg_noise_sigma=" << s.value("sg_noise_sigma", 0.0)
      << " xrai_regions=" << s.value("xrai_segment_count", 0) << "\n";
  out << "verdict rules: utility/base via paired bootstrap CI above 0; randomization via\n"
      << "fully-randomized SSIM below the random-pair threshold; low baseline SSIM 0.5\n\n";

  out << "models:\n";
  for (const auto& m : r.models) {
    out << "  " << m.name << " (" << m.arch << ", seed " << m.seed << "): best "
        << m.val_metric << " " << m.best_val << " at epoch " << m.best_epoch << "/"
        << m.stopped_epoch << ", test auc " << m.test_auc << "\n";
  }
  out << "\nrandomization sanity: trained auc " << r.randomization.trained_auc
      << ", fully randomized auc " << r.randomization.randomized_auc << "\n\n";

  auto cell = [&](bool pass) { return pass ? "PASS" : "FAIL"; };
  out << "method  utility          randomization  repeatability    reproducibility\n";
  out << "        AVG     BASE                    LOW     BASE     LOW     BASE\n";
  out << "------  ------  ------   ------------   ------  ------   ------  ------\n";
  for (const auto& [m, row] : r.grid) {
    char line[128];
    std::snprintf(line, sizeof line, "%-6s  %-6s  %-6s   %-12s   %-6s  %-6s   %-6s  %-6s\n",
                  method_label(m), cell(row.utility_avg), cell(row.utility_base),
                  cell(row.randomization), cell(row.repeat_low), cell(row.repeat_base),
                  cell(row.repro_low), cell(row.repro_base));
    out << line;
  }

  out << "\nutility (AUPRC mean+-std over positive test images):\n";
  for (const auto& [m, mu] : r.utility.methods) {
    const auto st = summarize(mu.auprc);
    char line[96];
    std::snprintf(line, sizeof line, "  %-6s %.3f +- %.3f\n", method_label(m), st.mean,
                  st.stddev);
    out << line;
  }
  {
    const auto avg = summarize(r.utility.avg_auprc);
    const auto base = summarize(r.utility.base_auprc);
    char line[112];
    std::snprintf(line, sizeof line, "  %-6s %.3f +- %.3f\n  %-6s %.3f +- %.3f\n", "AVG",
                  avg.mean, avg.stddev, "BASE", base.mean, base.stddev);
    out << line;
  }

  out << "\nrepeatability / reproducibility (SSIM mean+-std):\n";
  for (const auto& [m, ssims] : r.repeatability.ssim) {
    const auto rep = summarize(ssims);
    const auto rpo = summarize(r.reproducibility.ssim.at(m));
    char line[96];
    std::snprintf(line, sizeof line, "  %-6s %.3f +- %.3f   %.3f +- %.3f\n", method_label(m),
                  rep.mean, rep.stddev, rpo.mean, rpo.stddev);
    out << line;
  }
  {
    const auto rep = summarize(r.repeatability.baseline_ssim);
    const auto rpo = summarize(r.reproducibility.baseline_ssim);
    char line[96];
    std::snprintf(line, sizeof line, "  %-6s %.3f +- %.3f   %.3f +- %.3f\n", "BASE", rep.mean,
                  rep.stddev, rpo.mean, rpo.stddev);
    out << line;
  }
  return out.str();
}

std::string trace_to_csv(const RandomizationResult& r, Method m) {
  const auto& t = r.traces.at(m);
  std::ostringstream out;
  out << "depth,block,mean_ssim,std_ssim,threshold_mean\n";
  for (size_t i = 0; i < t.steps.size(); ++i)
    out << i << "," << t.steps[i].block << "," << t.steps[i].ssim.mean << ","
        << t.steps[i].ssim.stddev << "," << t.threshold.mean << "\n";
  return out.str();
}

std::string trace_to_svg(const RandomizationResult& r, Method m) {
  const auto& t = r.traces.at(m);
  const int w = 520, h = 300, ml = 50, mr = 20, mt = 30, mb = 60;
  const int pw = w - ml - mr, ph = h - mt - mb;
  const size_t n = t.steps.size();

  auto sx = [&](size_t i) {
    return ml + (n == 1 ? 0.0 : static_cast<double>(i) * pw / static_cast<double>(n - 1));
  };
  auto sy = [&](double ssim_value) {
    const double clamped = std::clamp(ssim_value, -0.05, 1.05);
    return mt + (1.05 - clamped) / 1.10 * ph;
  };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
      << method_label(m) << " SSIM under cascading randomization</text>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  for (double v = 0.0; v <= 1.0001; v += 0.25) {
    out << "<text x=\"" << ml - 6 << "\" y=\"" << sy(v) + 4
        << "\" text-anchor=\"end\" font-size=\"10\">" << v << "</text>\n";
    out << "<line x1=\"" << ml - 3 << "\" y1=\"" << sy(v) << "\" x2=\"" << ml << "\" y2=\""
        << sy(v) << "\" stroke=\"black\"/>\n";
  }
  // threshold
  out << "<line x1=\"" << ml << "\" y1=\"" << sy(t.threshold.mean) << "\" x2=\"" << ml + pw
      << "\" y2=\"" << sy(t.threshold.mean)
      << "\" stroke=\"crimson\" stroke-dasharray=\"6 4\"/>\n";
  out << "<text x=\"" << ml + pw << "\" y=\"" << sy(t.threshold.mean) - 4
      << "\" text-anchor=\"end\" font-size=\"10\" fill=\"crimson\">threshold "
      << t.threshold.mean << "</text>\n";
  // trace
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (size_t i = 0; i < n; ++i) out << sx(i) << "," << sy(t.steps[i].ssim.mean) << " ";
  out << "\"/>\n";
  for (size_t i = 0; i < n; ++i) {
    out << "<circle cx=\"" << sx(i) << "\" cy=\"" << sy(t.steps[i].ssim.mean)
        << "\" r=\"3\" fill=\"steelblue\"/>\n";
    out << "<text x=\"" << sx(i) << "\" y=\"" << mt + ph + 14
        << "\" text-anchor=\"end\" font-size=\"9\" transform=\"rotate(-35 " << sx(i) << " "
        << mt + ph + 14 << ")\">" << t.steps[i].block << "</text>\n";
  }
  out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 8
      << "\" text-anchor=\"middle\" font-size=\"11\">randomized depth (top to bottom)</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string pr_curve_to_csv(const PRCurve& curve) {
  std::ostringstream out;
  out << "threshold,precision,recall\n";
  for (const auto& p : curve.points)
    out << p.threshold << "," << p.precision << "," << p.recall << "\n";
  return out.str();
}

}  // namespace salaudit
