#include "salaudit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "salaudit/rng.hpp"
#include "salaudit/serialize.hpp"

namespace salaudit {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

const char* difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
  }
  return "?";
}

const char* flavor_name(Flavor f) {
  return f == Flavor::segmentation ? "segmentation" : "detection";
}

Difficulty difficulty_from_name(const std::string& s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "medium") return Difficulty::medium;
  if (s == "hard") return Difficulty::hard;
  throw ValidationError("unknown difficulty '" + s + "'");
}

Flavor flavor_from_name(const std::string& s) {
  if (s == "segmentation") return Flavor::segmentation;
  if (s == "detection") return Flavor::detection;
  throw ValidationError("unknown flavor '" + s + "'");
}

std::vector<size_t> Dataset::indices(Split s) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < samples.size(); ++i)
    if (manifest.split_of[i] == s) out.push_back(i);
  return out;
}

std::vector<size_t> Dataset::positive_indices(Split s) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < samples.size(); ++i)
    if (manifest.split_of[i] == s && samples[i].label == 1) out.push_back(i);
  return out;
}

namespace {

struct LesionParams {
  double radius_lo, radius_hi;
  double contrast_lo, contrast_hi;
};

LesionParams lesion_params(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return {5.0, 9.0, 0.12, 0.18};
    case Difficulty::medium: return {4.0, 7.0, 0.07, 0.11};
    case Difficulty::hard: return {3.0, 6.0, 0.04, 0.07};
  }
  return {};
}

// Smooth field from a coarse node grid, bilinearly interpolated, then shifted
// to exact zero mean so it cannot leak into the image-mean class signal.
std::vector<double> low_frequency_field(Rng& rng, int size, double amplitude) {
  const int cells = std::max(4, size / 8);
  const int nodes = cells + 1;
  std::vector<double> grid(static_cast<size_t>(nodes) * nodes);
  for (auto& v : grid) v = rng.truncated_normal(1.0);

  std::vector<double> field(static_cast<size_t>(size) * size);
  const double step = static_cast<double>(cells) / size;
  double mean = 0.0;
  for (int y = 0; y < size; ++y) {
    const double fy = (y + 0.5) * step;
    const int gy = std::min(cells - 1, static_cast<int>(fy));
    const double ty = fy - gy;
    for (int x = 0; x < size; ++x) {
      const double fx = (x + 0.5) * step;
      const int gx = std::min(cells - 1, static_cast<int>(fx));
      const double tx = fx - gx;
      const double v00 = grid[static_cast<size_t>(gy) * nodes + gx];
      const double v01 = grid[static_cast<size_t>(gy) * nodes + gx + 1];
      const double v10 = grid[static_cast<size_t>(gy + 1) * nodes + gx];
      const double v11 = grid[static_cast<size_t>(gy + 1) * nodes + gx + 1];
      const double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
      field[static_cast<size_t>(y) * size + x] = v * amplitude;
      mean += v * amplitude;
    }
  }
  mean /= static_cast<double>(field.size());
  for (auto& v : field) v -= mean;
  return field;
}

struct Lesion {
  std::vector<int> support;  // flat pixel indices
  Box box;
};

// Irregular blob: an ellipse-free radial outline r(theta) with a few low
// harmonics, filled, clipped to the image.
Lesion render_lesion(Rng& rng, int size, double radius, double contrast,
                     std::vector<double>& img) {
  const int margin = static_cast<int>(std::ceil(radius * 1.4)) + 1;
  const int cx = margin + static_cast<int>(rng.below(static_cast<uint64_t>(size - 2 * margin)));
  const int cy = margin + static_cast<int>(rng.below(static_cast<uint64_t>(size - 2 * margin)));
  double amp[3], phase[3];
  for (int k = 0; k < 3; ++k) {
    amp[k] = 0.10 + 0.15 * rng.uniform();
    phase[k] = rng.uniform() * 6.283185307179586;
  }
  Lesion les;
  int x0 = size, y0 = size, x1 = -1, y1 = -1;
  const int reach = static_cast<int>(std::ceil(radius * 1.45));
  for (int y = std::max(0, cy - reach); y <= std::min(size - 1, cy + reach); ++y) {
    for (int x = std::max(0, cx - reach); x <= std::min(size - 1, cx + reach); ++x) {
      const double dx = x - cx, dy = y - cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      const double theta = std::atan2(dy, dx);
      double r = radius;
      for (int k = 0; k < 3; ++k) r *= 1.0 + amp[k] * std::cos((k + 2) * theta + phase[k]) / 3.0;
      if (d <= r) {
        const int idx = y * size + x;
        // mild falloff toward the rim, always strictly positive inside
        img[static_cast<size_t>(idx)] += contrast * (1.0 - 0.3 * (d / (r + 1e-9)));
        les.support.push_back(idx);
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  les.box = {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
  return les;
}

Sample make_sample(uint64_t sample_seed, int index, int size, int label, Difficulty diff) {
  Rng rng(sample_seed);
  std::vector<double> img(static_cast<size_t>(size) * size, 0.45);

  const auto field = low_frequency_field(rng, size, 0.10);
  for (size_t i = 0; i < img.size(); ++i) img[i] += field[i];

  // rib-like periodic bands, zero mean by construction over the exact image
  const double period = 7.0 + 5.0 * rng.uniform();
  const double band_phase = rng.uniform() * 6.283185307179586;
  const double tilt = (rng.uniform() - 0.5) * 0.2;
  std::vector<double> band(img.size());
  double band_mean = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = 0.05 * std::sin(6.283185307179586 * (y + tilt * x) / period + band_phase);
      band[static_cast<size_t>(y) * size + x] = v;
      band_mean += v;
    }
  band_mean /= static_cast<double>(band.size());
  for (size_t i = 0; i < img.size(); ++i) img[i] += band[i] - band_mean;

  for (auto& v : img) v += (rng.uniform() - 0.5) * 0.02;

  Sample s;
  s.label = label;
  s.mask.assign(img.size(), 0);
  if (label == 1) {
    const auto lp = lesion_params(diff);
    const int n_lesions = 1 + static_cast<int>(rng.below(2));
    std::vector<Lesion> lesions;
    for (int li = 0; li < n_lesions; ++li) {
      // lesions must stay disjoint so each box bounds its own mask component;
      // a second lesion that cannot be placed after 24 tries is dropped
      for (int attempt = 0; attempt < 24; ++attempt) {
        std::vector<double> trial = img;
        const double radius = lp.radius_lo + (lp.radius_hi - lp.radius_lo) * rng.uniform();
        const double contrast = lp.contrast_lo + (lp.contrast_hi - lp.contrast_lo) * rng.uniform();
        Lesion cand = render_lesion(rng, size, radius * size / 64.0, contrast, trial);
        const bool overlaps = std::any_of(cand.support.begin(), cand.support.end(), [&](int p) {
          return s.mask[static_cast<size_t>(p)] != 0;
        });
        if (cand.support.empty() || overlaps) continue;
        img = std::move(trial);
        for (int p : cand.support) s.mask[static_cast<size_t>(p)] = 1;
        lesions.push_back(std::move(cand));
        break;
      }
    }
    if (lesions.empty()) throw std::runtime_error("generator failed to place any lesion");
    for (auto& l : lesions) s.boxes.push_back(l.box);
    size_t area = 0;
    for (uint8_t m : s.mask) area += m;
    if (area < 1 || area * 4 > img.size())
      throw std::runtime_error("generator produced an out-of-range lesion area");
  }

  s.image = Tensor({1, size, size});
  for (size_t i = 0; i < img.size(); ++i) {
    double v = std::clamp(img[i], 0.0, 1.0);
    s.image.data[i] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
  }

  char buf[16];
  std::snprintf(buf, sizeof buf, "s%06d", index);
  s.id = buf;
  return s;
}

}  // namespace

Dataset generate(const GenParams& params) {
  if (params.n < 100) throw ValidationError("generate: n must be >= 100");
  if (!(params.positive_fraction > 0.0 && params.positive_fraction < 1.0))
    throw ValidationError("generate: positive_fraction must lie in (0, 1)");
  if (params.image_size < 32 || params.image_size % 16 != 0)
    throw ValidationError("generate: image_size must be a positive multiple of 16 (>= 32)");

  const int n = params.n;
  const int n_train = static_cast<int>(std::lround(0.81 * n));
  const int n_val = static_cast<int>(std::lround(0.09 * n));
  const int n_test = n - n_train - n_val;
  const int n_pos = static_cast<int>(std::lround(params.positive_fraction * n));

  int pos_per_split[3];
  pos_per_split[0] = static_cast<int>(std::lround(params.positive_fraction * n_train));
  pos_per_split[1] = static_cast<int>(std::lround(params.positive_fraction * n_val));
  pos_per_split[2] = n_pos - pos_per_split[0] - pos_per_split[1];
  const int size_per_split[3] = {n_train, n_val, n_test};

  Dataset ds;
  ds.manifest.params = params;
  ds.manifest.split_of.reserve(static_cast<size_t>(n));

  Rng label_rng(mix_seed(params.seed, 7));
  int index = 0;
  for (int sp = 0; sp < 3; ++sp) {
    std::vector<int> labels(static_cast<size_t>(size_per_split[sp]), 0);
    std::fill(labels.begin(), labels.begin() + pos_per_split[sp], 1);
    for (size_t i = labels.size(); i > 1; --i)
      std::swap(labels[i - 1], labels[label_rng.below(i)]);
    for (int label : labels) {
      ds.samples.push_back(make_sample(mix_seed(params.seed, 1000 + static_cast<uint64_t>(index)),
                                       index, params.image_size, label, params.difficulty));
      ds.manifest.split_of.push_back(static_cast<Split>(sp));
      ds.manifest.counts[sp].total += 1;
      ds.manifest.counts[sp].positives += label;
      ++index;
    }
  }
  return ds;
}

std::vector<uint8_t> truth_mask(const Sample& s, Flavor flavor, int image_size) {
  if (flavor == Flavor::segmentation) return s.mask;
  std::vector<uint8_t> m(static_cast<size_t>(image_size) * image_size, 0);
  for (const auto& b : s.boxes)
    for (int y = b.y; y < b.y + b.h; ++y)
      for (int x = b.x; x < b.x + b.w; ++x)
        m[static_cast<size_t>(y) * image_size + x] = 1;
  return m;
}

Tensor average_mask(const Dataset& ds) {
  const int size = ds.image_size();
  std::vector<double> acc(static_cast<size_t>(size) * size, 0.0);
  int64_t n_pos = 0;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const Split sp = ds.manifest.split_of[i];
    if (sp == Split::test || ds.samples[i].label != 1) continue;
    const auto truth = truth_mask(ds.samples[i], ds.manifest.params.flavor, size);
    for (size_t p = 0; p < truth.size(); ++p) acc[p] += truth[p] ? 1.0 : 0.0;
    ++n_pos;
  }
  if (n_pos == 0)
    throw ValidationError("average_mask: no positive samples in train+val");
  Tensor out({size, size});
  for (size_t p = 0; p < acc.size(); ++p)
    out.data[p] = static_cast<float>(acc[p] / static_cast<double>(n_pos));
  return out;
}

void export_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  const int size = ds.image_size();
  std::filesystem::create_directories(dir);

  Json manifest;
  manifest["schema"] = "salaudit-dataset/1";
  manifest["seed"] = ds.manifest.params.seed;
  manifest["n"] = ds.manifest.params.n;
  manifest["positive_fraction"] = ds.manifest.params.positive_fraction;
  manifest["difficulty"] = difficulty_name(ds.manifest.params.difficulty);
  manifest["flavor"] = flavor_name(ds.manifest.params.flavor);
  manifest["image_size"] = size;
  for (int sp = 0; sp < 3; ++sp) {
    Json c;
    c["total"] = ds.manifest.counts[sp].total;
    c["positives"] = ds.manifest.counts[sp].positives;
    manifest["counts"][split_name(static_cast<Split>(sp))] = c;
  }
  Json samples = Json::array();
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    Json s;
    s["id"] = ds.samples[i].id;
    s["split"] = split_name(ds.manifest.split_of[i]);
    s["label"] = ds.samples[i].label;
    samples.push_back(s);
  }
  manifest["samples"] = samples;
  write_json_file(dir / "manifest.json", manifest);

  std::ostringstream boxes;
  boxes << "sample_id,x,y,w,h\n";
  for (const auto& s : ds.samples) {
    std::vector<uint8_t> px(s.image.data.size());
    for (size_t p = 0; p < px.size(); ++p)
      px[p] = static_cast<uint8_t>(std::lround(s.image.data[p] * 255.0f));
    pgm_write(dir / "images" / (s.id + ".pgm"), size, size, px);
    if (s.label == 1) {
      std::vector<uint8_t> mp(s.mask.size());
      for (size_t p = 0; p < mp.size(); ++p) mp[p] = s.mask[p] ? 255 : 0;
      pgm_write(dir / "masks" / (s.id + ".pgm"), size, size, mp);
      for (const auto& b : s.boxes)
        boxes << s.id << "," << b.x << "," << b.y << "," << b.w << "," << b.h << "\n";
    }
  }
  write_text_file(dir / "boxes.csv", boxes.str());
}

Dataset import_dataset(const std::filesystem::path& dir) {
  const Json manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("schema", "") != "salaudit-dataset/1")
    throw ValidationError((dir / "manifest.json").string() + ": unknown schema");

  Dataset ds;
  ds.manifest.params.seed = manifest.at("seed").get<uint64_t>();
  ds.manifest.params.n = manifest.at("n").get<int>();
  ds.manifest.params.positive_fraction = manifest.at("positive_fraction").get<double>();
  ds.manifest.params.difficulty = difficulty_from_name(manifest.at("difficulty").get<std::string>());
  ds.manifest.params.flavor = flavor_from_name(manifest.at("flavor").get<std::string>());
  ds.manifest.params.image_size = manifest.at("image_size").get<int>();
  const int size = ds.manifest.params.image_size;

  // boxes, grouped by sample id
  std::unordered_map<std::string, std::vector<Box>> boxes_by_id;
  {
    std::ifstream f(dir / "boxes.csv");
    if (!f) throw ValidationError((dir / "boxes.csv").string() + ": cannot open");
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string id, tok;
      Box b;
      std::getline(row, id, ',');
      std::getline(row, tok, ',');
      b.x = std::stoi(tok);
      std::getline(row, tok, ',');
      b.y = std::stoi(tok);
      std::getline(row, tok, ',');
      b.w = std::stoi(tok);
      std::getline(row, tok, ',');
      b.h = std::stoi(tok);
      if (b.x < 0 || b.y < 0 || b.w < 1 || b.h < 1 || b.x + b.w > size || b.y + b.h > size)
        throw ValidationError((dir / "boxes.csv").string() + ": box out of bounds for '" + id +
                              "'");
      boxes_by_id[id].push_back(b);
    }
  }

  for (const auto& rec : manifest.at("samples")) {
    Sample s;
    s.id = rec.at("id").get<std::string>();
    s.label = rec.at("label").get<int>();
    const Split sp = [&] {
      const std::string name = rec.at("split").get<std::string>();
      if (name == "train") return Split::train;
      if (name == "val") return Split::val;
      if (name == "test") return Split::test;
      throw ValidationError(dir.string() + ": unknown split '" + name + "' for " + s.id);
    }();

    const auto img_path = dir / "images" / (s.id + ".pgm");
    const PgmImage img = pgm_read(img_path);
    if (img.h != size || img.w != size)
      throw ValidationError(img_path.string() + ": image is " + std::to_string(img.w) + "x" +
                            std::to_string(img.h) + ", manifest says " + std::to_string(size) +
                            "x" + std::to_string(size));
    s.image = Tensor({1, size, size});
    for (size_t p = 0; p < img.pixels.size(); ++p)
      s.image.data[p] = static_cast<float>(img.pixels[p]) / 255.0f;

    s.mask.assign(static_cast<size_t>(size) * size, 0);
    const auto mask_path = dir / "masks" / (s.id + ".pgm");
    const bool has_mask = std::filesystem::exists(mask_path);
    if (has_mask != (s.label == 1))
      throw ValidationError(mask_path.string() + ": mask presence contradicts label " +
                            std::to_string(s.label));
    if (has_mask) {
      const PgmImage m = pgm_read(mask_path);
      if (m.h != img.h || m.w != img.w)
        throw ValidationError(mask_path.string() + ": mask is " + std::to_string(m.w) + "x" +
                              std::to_string(m.h) + " but image is " + std::to_string(img.w) +
                              "x" + std::to_string(img.h));
      bool any = false;
      for (size_t p = 0; p < m.pixels.size(); ++p) {
        if (m.pixels[p] != 0 && m.pixels[p] != 255)
          throw ValidationError(mask_path.string() + ": mask values must be 0 or 255");
        s.mask[p] = m.pixels[p] ? 1 : 0;
        any |= s.mask[p] != 0;
      }
      if (!any) throw ValidationError(mask_path.string() + ": positive sample with empty mask");
    }
    if (auto it = boxes_by_id.find(s.id); it != boxes_by_id.end()) {
      if (s.label != 1)
        throw ValidationError(dir.string() + ": boxes listed for negative sample " + s.id);
      s.boxes = it->second;
    } else if (s.label == 1) {
      throw ValidationError(dir.string() + ": positive sample " + s.id + " has no boxes");
    }

    const int spi = static_cast<int>(sp);
    ds.manifest.counts[spi].total += 1;
    ds.manifest.counts[spi].positives += s.label;
    ds.manifest.split_of.push_back(sp);
    ds.samples.push_back(std::move(s));
  }

  for (int sp = 0; sp < 3; ++sp) {
    const auto& stored = manifest.at("counts").at(split_name(static_cast<Split>(sp)));
    if (stored.at("total").get<int>() != ds.manifest.counts[sp].total ||
        stored.at("positives").get<int>() != ds.manifest.counts[sp].positives)
      throw ValidationError((dir / "manifest.json").string() +
                            ": stored counts disagree with the samples on disk for split " +
                            split_name(static_cast<Split>(sp)));
  }
  // split discipline: 81:9:10 within one-sample rounding
  const int n = static_cast<int>(ds.samples.size());
  if (std::abs(ds.manifest.counts[0].total - static_cast<int>(std::lround(0.81 * n))) > 1 ||
      std::abs(ds.manifest.counts[1].total - static_cast<int>(std::lround(0.09 * n))) > 1)
    throw ValidationError((dir / "manifest.json").string() + ": splits deviate from 81:9:10");
  return ds;
}

}  // namespace salaudit
