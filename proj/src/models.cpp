#include "salaudit/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "salaudit/ops.hpp"
#include "salaudit/serialize.hpp"

namespace salaudit {

const char* arch_name(ArchId a) { return a == ArchId::arch_a ? "arch_a" : "arch_b"; }

ArchId arch_from_name(const std::string& s) {
  if (s == "arch_a") return ArchId::arch_a;
  if (s == "arch_b") return ArchId::arch_b;
  throw ValidationError("unknown architecture '" + s + "'");
}

Network build_classifier(ArchId arch, int image_size) {
  using L = LayerSpec;
  if (arch == ArchId::arch_a) {
    if (image_size % 16 != 0)
      throw ValidationError("arch_a needs an image size divisible by 16");
    std::vector<L> layers;
    int c = 1;
    const int widths[4] = {8, 16, 32, 64};
    for (int b = 0; b < 4; ++b) {
      const std::string n = std::to_string(b + 1);
      layers.push_back(L::conv("conv" + n, c, widths[b], 3, 1, 1));
      layers.push_back(L::relu_layer("relu" + n));
      layers.push_back(L::maxpool_layer("pool" + n));
      c = widths[b];
    }
    layers.push_back(L::globalavgpool_layer("gap"));
    layers.push_back(L::dense_layer("head", 64, 1));
    return Network(std::move(layers), 1, image_size, image_size);
  }
  if (image_size % 8 != 0) throw ValidationError("arch_b needs an image size divisible by 8");
  std::vector<L> layers;
  int c = 1;
  const int widths[3] = {8, 16, 32};
  for (int b = 0; b < 3; ++b) {
    const std::string n = std::to_string(b + 1);
    layers.push_back(L::conv("conv" + n, c, widths[b], 5, 1, 2));
    layers.push_back(L::relu_layer("relu" + n));
    layers.push_back(L::avgpool_layer("pool" + n));
    c = widths[b];
  }
  const int feat = 32 * (image_size / 8) * (image_size / 8);
  layers.push_back(L::dense_layer("dense", feat, 32));
  layers.push_back(L::relu_layer("relu_dense"));
  layers.push_back(L::dense_layer("head", 32, 1));
  return Network(std::move(layers), 1, image_size, image_size);
}

Network build_segmenter(int image_size) {
  using L = LayerSpec;
  if (image_size % 8 != 0) throw ValidationError("segmenter needs an image size divisible by 8");
  std::vector<L> layers;
  const int enc_w[3] = {8, 16, 32};
  int c = 1;
  for (int b = 0; b < 3; ++b) {
    const std::string n = std::to_string(b + 1);
    layers.push_back(L::conv("enc" + n, c, enc_w[b], 3, 1, 1));
    layers.push_back(L::relu_layer("enc" + n + "_relu"));
    layers.push_back(L::maxpool_layer("enc" + n + "_pool"));
    c = enc_w[b];
  }
  layers.push_back(L::conv("mid", 32, 32, 3, 1, 1));
  layers.push_back(L::relu_layer("mid_relu"));
  const int dec_w[3] = {16, 8, 8};
  c = 32;
  for (int b = 0; b < 3; ++b) {
    const std::string n = std::to_string(3 - b);  // dec3 runs at the deepest scale
    const int skip_c = enc_w[2 - b];
    layers.push_back(L::upsample("dec" + n + "_up"));
    layers.push_back(L::concat("dec" + n + "_cat", "enc" + n + "_relu"));
    layers.push_back(L::conv("dec" + n, c + skip_c, dec_w[b], 3, 1, 1));
    layers.push_back(L::relu_layer("dec" + n + "_relu"));
    c = dec_w[b];
  }
  layers.push_back(L::conv("out", 8, 1, 1, 1, 0));
  return Network(std::move(layers), 1, image_size, image_size);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("roc_auc: size mismatch");
  int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("roc_auc: labels must be 0 or 1");
    (y ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0)
    throw ValidationError("roc_auc: needs both classes present");

  std::vector<uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += midrank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

BalancedSampler::BalancedSampler(std::vector<size_t> positives, std::vector<size_t> negatives,
                                 uint64_t seed)
    : pos_(std::move(positives)), neg_(std::move(negatives)), rng_(seed) {
  if (pos_.empty() || neg_.empty())
    throw ValidationError("balanced sampler: needs at least one sample of each class");
}

size_t BalancedSampler::draw() {
  const bool positive = rng_.uniform() < 0.5;
  const auto& pool = positive ? pos_ : neg_;
  return pool[rng_.below(pool.size())];
}

namespace {

void add_scaled(WeightStore& acc, const WeightStore& g, float scale) {
  for (const auto& name : g.names()) {
    auto& a = acc.get_mutable(name);
    const auto& t = g.get(name);
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += scale * t.data[i];
  }
}

WeightStore zeros_like(const WeightStore& w) {
  WeightStore z;
  for (const auto& name : w.names()) z.put(name, Tensor(w.get(name).shape));
  return z;
}

void require_both_classes(const Dataset& ds, Split split) {
  int pos = 0, neg = 0;
  for (size_t i : ds.indices(split)) (ds.samples[i].label ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw ValidationError(std::string("training: ") + split_name(split) +
                          " split must contain both classes");
}

}  // namespace

TrainedModel train_classifier(const Dataset& ds, ArchId arch, const TrainOptions& opt) {
  require_both_classes(ds, Split::train);
  require_both_classes(ds, Split::val);
  if (opt.max_epochs < 1 || opt.patience < 1 || opt.batch_size < 1)
    throw ValidationError("train_classifier: bad options");

  TrainedModel m;
  m.arch = arch_name(arch);
  m.image_size = ds.image_size();
  m.net = build_classifier(arch, m.image_size);
  m.seed = opt.seed;
  m.val_metric = "auc";
  m.weights = init_weights(m.net, mix_seed(opt.seed, 1));

  const auto train_idx = ds.indices(Split::train);
  const auto val_idx = ds.indices(Split::val);

  AdamState adam;
  WeightStore best = m.weights;
  double best_auc = -1.0;
  int stall = 0;

  std::vector<size_t> order(train_idx);
  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(opt.seed, 100 + static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opt.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(opt.batch_size));
      WeightStore grad_acc = zeros_like(m.weights);
      for (size_t k = start; k < end; ++k) {
        const Sample& s = ds.samples[order[k]];
        auto fwd = forward(m.net, m.weights, s.image);
        const double p = sigmoid(static_cast<double>(fwd.output.data[0]));
        Tensor seed_grad({1});
        seed_grad.data[0] = static_cast<float>(p - s.label);
        auto back = backward(m.net, m.weights, fwd.tape, seed_grad);
        add_scaled(grad_acc, back.weight_grads, 1.0f / static_cast<float>(end - start));
      }
      adam_step(m.weights, grad_acc, adam, opt.lr);
    }

    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(val_idx.size());
    for (size_t i : val_idx) {
      auto fwd = forward(m.net, m.weights, ds.samples[i].image);
      scores.push_back(sigmoid(static_cast<double>(fwd.output.data[0])));
      labels.push_back(ds.samples[i].label);
    }
    const double auc = roc_auc(scores, labels);
    m.val_history.push_back(auc);
    m.stopped_epoch = epoch;

    if (auc > best_auc) {
      best_auc = auc;
      best = m.weights;
      m.best_epoch = epoch;
      stall = 0;
    } else if (++stall >= opt.patience) {
      break;
    }
  }
  m.weights = std::move(best);
  return m;
}

namespace {

// 50/50 mix of focal (gamma 2, alpha 0.25) and dice loss on the sigmoid map.
// Returns the loss and fills d(loss)/d(logit) when grad is non-null.
double seg_loss_and_grad(const Tensor& logits, const std::vector<uint8_t>& truth, Tensor* grad) {
  constexpr double kGamma = 2.0, kAlpha = 0.25, kEps = 1e-7, kSmooth = 1.0;
  const size_t n = logits.data.size();
  std::vector<double> p(n);
  double sum_p = 0.0, sum_t = 0.0, sum_pt = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] = std::clamp(sigmoid(static_cast<double>(logits.data[i])), kEps, 1.0 - kEps);
    sum_p += p[i];
    sum_t += truth[i] ? 1.0 : 0.0;
    sum_pt += truth[i] ? p[i] : 0.0;
  }

  double focal = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (truth[i])
      focal += -kAlpha * std::pow(1.0 - p[i], kGamma) * std::log(p[i]);
    else
      focal += -(1.0 - kAlpha) * std::pow(p[i], kGamma) * std::log(1.0 - p[i]);
  }
  focal /= static_cast<double>(n);

  const double dice_den = sum_p + sum_t + kSmooth;
  const double dice = 1.0 - (2.0 * sum_pt + kSmooth) / dice_den;
  const double loss = 0.5 * focal + 0.5 * dice;
  if (!grad) return loss;

  for (size_t i = 0; i < n; ++i) {
    double dfocal_dp;
    if (truth[i]) {
      const double q = 1.0 - p[i];
      dfocal_dp = -kAlpha * (-kGamma * std::pow(q, kGamma - 1.0) * std::log(p[i]) +
                             std::pow(q, kGamma) / p[i]);
    } else {
      dfocal_dp = -(1.0 - kAlpha) * (kGamma * std::pow(p[i], kGamma - 1.0) * std::log(1.0 - p[i]) -
                                     std::pow(p[i], kGamma) / (1.0 - p[i]));
    }
    dfocal_dp /= static_cast<double>(n);
    const double t = truth[i] ? 1.0 : 0.0;
    const double ddice_dp = -(2.0 * t * dice_den - (2.0 * sum_pt + kSmooth)) / (dice_den * dice_den);
    const double dsig = p[i] * (1.0 - p[i]);
    grad->data[i] = static_cast<float>((0.5 * dfocal_dp + 0.5 * ddice_dp) * dsig);
  }
  return loss;
}

}  // namespace

TrainedModel train_segmenter(const Dataset& ds, const SegTrainOptions& opt) {
  require_both_classes(ds, Split::train);
  require_both_classes(ds, Split::val);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    if (s.label == 1 && std::none_of(s.mask.begin(), s.mask.end(), [](uint8_t v) { return v != 0; }))
      throw ValidationError("train_segmenter: positive sample " + s.id + " has an empty mask");
  }

  TrainedModel m;
  m.arch = "seg";
  m.image_size = ds.image_size();
  m.net = build_segmenter(m.image_size);
  m.seed = opt.seed;
  m.val_metric = "loss";
  m.weights = init_weights(m.net, mix_seed(opt.seed, 1));

  std::vector<size_t> pos, neg;
  for (size_t i : ds.indices(Split::train))
    (ds.samples[i].label ? pos : neg).push_back(i);
  BalancedSampler sampler(pos, neg, mix_seed(opt.seed, 2));
  const auto val_idx = ds.indices(Split::val);
  const Flavor flavor = ds.manifest.params.flavor;

  AdamState adam;
  float lr = opt.lr;
  WeightStore best = m.weights;
  double best_loss = std::numeric_limits<double>::infinity();
  int stall = 0;

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    for (int step = 0; step < opt.steps_per_epoch; ++step) {
      WeightStore grad_acc = zeros_like(m.weights);
      for (int b = 0; b < opt.batch_size; ++b) {
        const Sample& s = ds.samples[sampler.draw()];
        auto fwd = forward(m.net, m.weights, s.image);
        Tensor seed_grad(fwd.output.shape);
        seg_loss_and_grad(fwd.output, truth_mask(s, flavor, m.image_size), &seed_grad);
        auto back = backward(m.net, m.weights, fwd.tape, seed_grad);
        add_scaled(grad_acc, back.weight_grads, 1.0f / static_cast<float>(opt.batch_size));
      }
      adam_step(m.weights, grad_acc, adam, lr);
    }

    double val_loss = 0.0;
    for (size_t i : val_idx) {
      auto fwd = forward(m.net, m.weights, ds.samples[i].image);
      val_loss += seg_loss_and_grad(fwd.output,
                                    truth_mask(ds.samples[i], flavor, m.image_size), nullptr);
    }
    val_loss /= static_cast<double>(val_idx.size());
    m.val_history.push_back(val_loss);
    m.stopped_epoch = epoch;

    if (val_loss < best_loss) {
      best_loss = val_loss;
      best = m.weights;
      m.best_epoch = epoch;
      stall = 0;
    } else {
      ++stall;
      if (stall >= opt.stop_patience) break;
      if (stall % opt.decay_patience == 0) lr *= 0.1f;
    }
  }
  m.weights = std::move(best);
  return m;
}

double classify(const TrainedModel& m, const Tensor& image) {
  auto fwd = forward(m.net, m.weights, image);
  if (fwd.output.numel() != 1)
    throw ValidationError("classify: model '" + m.arch + "' is not a classifier");
  return sigmoid(static_cast<double>(fwd.output.data[0]));
}

Tensor segment(const TrainedModel& m, const Tensor& image) {
  auto fwd = forward(m.net, m.weights, image);
  if (fwd.output.rank() != 3 || fwd.output.shape[0] != 1)
    throw ValidationError("segment: model '" + m.arch + "' is not a segmenter");
  Tensor out({fwd.output.shape[1], fwd.output.shape[2]});
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<float>(sigmoid(static_cast<double>(fwd.output.data[i])));
  return out;
}

double seg_score(const Tensor& prob_map) {
  double acc = 0.0;
  int64_t n = 0;
  for (float v : prob_map.data) {
    if (v > 0.0f) {
      acc += v;
      ++n;
    }
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

std::vector<std::pair<std::string, std::vector<std::string>>> randomization_blocks(
    const TrainedModel& m) {
  std::vector<std::pair<std::string, std::vector<std::string>>> blocks;
  if (m.arch == "arch_a") {
    blocks = {{"logits", {"head"}},
              {"conv4", {"conv4"}},
              {"conv3", {"conv3"}},
              {"conv2", {"conv2"}},
              {"conv1", {"conv1"}}};
  } else if (m.arch == "arch_b") {
    blocks = {{"logits", {"head"}},
              {"dense", {"dense"}},
              {"conv3", {"conv3"}},
              {"conv2", {"conv2"}},
              {"conv1", {"conv1"}}};
  } else {
    throw ValidationError("randomization_blocks: classifier required, got '" + m.arch + "'");
  }
  return blocks;
}

void save_model(const std::filesystem::path& dir, const std::string& name,
                const TrainedModel& m) {
  std::filesystem::create_directories(dir);
  weights_write(dir / (name + ".salw"), m.weights);
  Json j;
  j["schema"] = "salaudit-model/1";
  j["arch"] = m.arch;
  j["image_size"] = m.image_size;
  j["seed"] = m.seed;
  j["val_metric"] = m.val_metric;
  j["val_history"] = m.val_history;
  j["stopped_epoch"] = m.stopped_epoch;
  j["best_epoch"] = m.best_epoch;
  write_json_file(dir / (name + ".json"), j);
}

TrainedModel load_model(const std::filesystem::path& dir, const std::string& name) {
  const Json j = read_json_file(dir / (name + ".json"));
  TrainedModel m;
  m.arch = j.at("arch").get<std::string>();
  m.image_size = j.at("image_size").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  m.val_metric = j.at("val_metric").get<std::string>();
  m.val_history = j.at("val_history").get<std::vector<double>>();
  m.stopped_epoch = j.at("stopped_epoch").get<int>();
  m.best_epoch = j.at("best_epoch").get<int>();
  m.net = m.arch == "seg" ? build_segmenter(m.image_size)
                          : build_classifier(arch_from_name(m.arch), m.image_size);
  m.weights = weights_read(dir / (name + ".salw"));
  return m;
}

}  // namespace salaudit
