#include "salaudit/net.hpp"

#include <algorithm>
#include <cstring>

#include "salaudit/rng.hpp"

namespace salaudit {

namespace {

[[noreturn]] void fail(const std::string& layer, const std::string& msg) {
  throw ValidationError("layer '" + layer + "': " + msg);
}

void check_3d(const LayerSpec& l, const std::vector<int>& s) {
  if (s.size() != 3) fail(l.name, "expected a CxHxW input, got " + shape_str(s));
}

}  // namespace

const char* LayerSpec::kind_name(Kind k) {
  switch (k) {
    case Kind::conv2d: return "conv2d";
    case Kind::relu: return "relu";
    case Kind::maxpool: return "maxpool";
    case Kind::avgpool: return "avgpool";
    case Kind::globalavgpool: return "globalavgpool";
    case Kind::dense: return "dense";
    case Kind::sigmoid: return "sigmoid";
    case Kind::upsample_nearest: return "upsample-nearest";
    case Kind::concat_skip: return "concat-skip";
  }
  return "?";
}

LayerSpec LayerSpec::conv(std::string name, int in_c, int out_c, int k, int stride, int padding) {
  LayerSpec l;
  l.kind = Kind::conv2d;
  l.name = std::move(name);
  l.in_channels = in_c;
  l.out_channels = out_c;
  l.kernel = k;
  l.stride = stride;
  l.padding = padding;
  if (in_c < 1 || out_c < 1) fail(l.name, "channel counts must be positive");
  if (k < 1) fail(l.name, "kernel must be >= 1");
  if (stride < 1) fail(l.name, "stride must be >= 1");
  if (padding < 0) fail(l.name, "padding must be >= 0");
  return l;
}

LayerSpec LayerSpec::relu_layer(std::string name) {
  LayerSpec l;
  l.kind = Kind::relu;
  l.name = std::move(name);
  return l;
}

LayerSpec LayerSpec::maxpool_layer(std::string name, int k, int stride) {
  LayerSpec l;
  l.kind = Kind::maxpool;
  l.name = std::move(name);
  l.kernel = k;
  l.stride = stride;
  if (k < 1 || stride < 1) fail(l.name, "pool kernel and stride must be >= 1");
  return l;
}

LayerSpec LayerSpec::avgpool_layer(std::string name, int k, int stride) {
  LayerSpec l = maxpool_layer(std::move(name), k, stride);
  l.kind = Kind::avgpool;
  return l;
}

LayerSpec LayerSpec::globalavgpool_layer(std::string name) {
  LayerSpec l;
  l.kind = Kind::globalavgpool;
  l.name = std::move(name);
  return l;
}

LayerSpec LayerSpec::dense_layer(std::string name, int in_f, int out_f) {
  LayerSpec l;
  l.kind = Kind::dense;
  l.name = std::move(name);
  l.in_features = in_f;
  l.out_features = out_f;
  if (in_f < 1 || out_f < 1) fail(l.name, "feature counts must be positive");
  return l;
}

LayerSpec LayerSpec::sigmoid_layer(std::string name) {
  LayerSpec l;
  l.kind = Kind::sigmoid;
  l.name = std::move(name);
  return l;
}

LayerSpec LayerSpec::upsample(std::string name, int factor) {
  LayerSpec l;
  l.kind = Kind::upsample_nearest;
  l.name = std::move(name);
  l.factor = factor;
  if (factor < 1) fail(l.name, "upsample factor must be >= 1");
  return l;
}

LayerSpec LayerSpec::concat(std::string name, std::string skip_from) {
  LayerSpec l;
  l.kind = Kind::concat_skip;
  l.name = std::move(name);
  l.skip_from = std::move(skip_from);
  if (l.skip_from.empty()) fail(l.name, "concat-skip needs a source layer");
  return l;
}

Network::Network(std::vector<LayerSpec> ls, int c, int h, int w)
    : layers(std::move(ls)), in_channels(c), in_h(h), in_w(w) {
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    const auto& l = layers[i];
    if (l.name.empty()) throw ValidationError("network: layer " + std::to_string(i) + " unnamed");
    if (!index_.emplace(l.name, i).second)
      throw ValidationError("network: duplicate layer name '" + l.name + "'");
  }
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerSpec::Kind::concat_skip) {
      auto it = index_.find(l.skip_from);
      if (it == index_.end() || it->second >= i)
        fail(l.name, "skip source '" + l.skip_from + "' is not an earlier layer");
    }
  }
  infer_shapes();  // surfaces shape contradictions at construction
}

const LayerSpec& Network::layer(const std::string& name) const {
  return layers[static_cast<size_t>(layer_index(name))];
}

int Network::layer_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("network: no layer named '" + name + "'");
  return it->second;
}

std::string Network::last_conv_layer() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == LayerSpec::Kind::conv2d) return it->name;
  throw ValidationError("network: no conv2d layer present");
}

std::vector<std::vector<int>> Network::infer_shapes() const {
  std::vector<std::vector<int>> outs;
  outs.reserve(layers.size());
  std::vector<int> cur = {in_channels, in_h, in_w};
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    const auto& l = layers[i];
    switch (l.kind) {
      case LayerSpec::Kind::conv2d: {
        check_3d(l, cur);
        if (cur[0] != l.in_channels)
          fail(l.name, "expected " + std::to_string(l.in_channels) + " input channels, got " +
                           std::to_string(cur[0]));
        const int ph = cur[1] + 2 * l.padding, pw = cur[2] + 2 * l.padding;
        if (l.kernel > ph || l.kernel > pw)
          fail(l.name, "kernel " + std::to_string(l.kernel) + " exceeds padded input " +
                           std::to_string(ph) + "x" + std::to_string(pw));
        cur = {l.out_channels, (ph - l.kernel) / l.stride + 1, (pw - l.kernel) / l.stride + 1};
        break;
      }
      case LayerSpec::Kind::maxpool:
      case LayerSpec::Kind::avgpool: {
        check_3d(l, cur);
        if (l.kernel > cur[1] || l.kernel > cur[2])
          fail(l.name, "pool kernel exceeds input " + shape_str(cur));
        cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerSpec::Kind::globalavgpool:
        check_3d(l, cur);
        cur = {cur[0]};
        break;
      case LayerSpec::Kind::dense: {
        int64_t n = 1;
        for (int d : cur) n *= d;
        if (n != l.in_features)
          fail(l.name, "expected " + std::to_string(l.in_features) + " input features, got " +
                           std::to_string(n) + " from " + shape_str(cur));
        cur = {l.out_features};
        break;
      }
      case LayerSpec::Kind::relu:
      case LayerSpec::Kind::sigmoid:
        break;
      case LayerSpec::Kind::upsample_nearest:
        check_3d(l, cur);
        cur = {cur[0], cur[1] * l.factor, cur[2] * l.factor};
        break;
      case LayerSpec::Kind::concat_skip: {
        check_3d(l, cur);
        const auto& src = outs[static_cast<size_t>(layer_index(l.skip_from))];
        if (src.size() != 3 || src[1] != cur[1] || src[2] != cur[2])
          fail(l.name, "skip source shape " + shape_str(src) + " does not align with " +
                           shape_str(cur));
        cur = {cur[0] + src[0], cur[1], cur[2]};
        break;
      }
    }
    outs.push_back(cur);
  }
  return outs;
}

// ---------------------------------------------------------------------------
// WeightStoreT

template <typename T>
void WeightStoreT<T>::put(const std::string& name, Ten<T> t) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    index_.emplace(name, names_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(t));
  } else {
    tensors_[it->second] = std::move(t);
  }
  hash_valid_ = false;
}

template <typename T>
const Ten<T>& WeightStoreT<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("weight store: missing tensor '" + name + "'");
  return tensors_[it->second];
}

template <typename T>
Ten<T>& WeightStoreT<T>::get_mutable(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("weight store: missing tensor '" + name + "'");
  hash_valid_ = false;
  return tensors_[it->second];
}

template <typename T>
uint64_t WeightStoreT<T>::content_hash() const {
  if (hash_valid_) return hash_;
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (size_t i = 0; i < names_.size(); ++i) {
    feed(names_[i].data(), names_[i].size() + 1);
    const auto& t = tensors_[i];
    for (int d : t.shape) {
      uint32_t v = static_cast<uint32_t>(d);
      feed(&v, sizeof v);
    }
    feed(t.data.data(), t.data.size() * sizeof(T));
  }
  hash_ = h;
  hash_valid_ = true;
  return h;
}

template class WeightStoreT<float>;
template class WeightStoreT<double>;

// ---------------------------------------------------------------------------
// Forward kernels

namespace {

template <typename T>
void conv2d_forward(const LayerSpec& l, const Ten<T>& in, const Ten<T>& w, const Ten<T>& b,
                    Ten<T>& out) {
  const int H = in.shape[1], W = in.shape[2];
  const int Ho = out.shape[1], Wo = out.shape[2];
  const int k = l.kernel, s = l.stride, p = l.padding;
  for (int oc = 0; oc < l.out_channels; ++oc) {
    T* outc = out.ptr() + static_cast<size_t>(oc) * Ho * Wo;
    std::fill(outc, outc + static_cast<size_t>(Ho) * Wo, b.data[static_cast<size_t>(oc)]);
    for (int ic = 0; ic < l.in_channels; ++ic) {
      const T* inc = in.ptr() + static_cast<size_t>(ic) * H * W;
      const T* wk = w.ptr() + (static_cast<size_t>(oc) * l.in_channels + ic) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          // input x index: ix = ox*s - p + kx, clamp ox so ix stays in range
          int ox_lo = 0, ox_hi = Wo;
          if (s == 1) {
            ox_lo = std::max(0, p - kx);
            ox_hi = std::min(Wo, W - 1 + p - kx + 1);
          } else {
            while (ox_lo < Wo && ox_lo * s - p + kx < 0) ++ox_lo;
            while (ox_hi > ox_lo && (ox_hi - 1) * s - p + kx >= W) --ox_hi;
          }
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= H) continue;
            const T* inrow = inc + static_cast<size_t>(iy) * W;
            T* outrow = outc + static_cast<size_t>(oy) * Wo;
            if (s == 1) {
              const T* src = inrow + (ox_lo - p + kx);
              for (int ox = ox_lo; ox < ox_hi; ++ox) outrow[ox] += wv * src[ox - ox_lo];
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) outrow[ox] += wv * inrow[ox * s - p + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void dense_forward(const LayerSpec& l, const Ten<T>& in, const Ten<T>& w, const Ten<T>& b,
                   Ten<T>& out) {
  const int n_in = l.in_features, n_out = l.out_features;
  for (int o = 0; o < n_out; ++o) {
    const T* wr = w.ptr() + static_cast<size_t>(o) * n_in;
    T acc = b.data[static_cast<size_t>(o)];
    for (int i = 0; i < n_in; ++i) acc += wr[i] * in.data[static_cast<size_t>(i)];
    out.data[static_cast<size_t>(o)] = acc;
  }
}

template <typename T>
void maxpool_forward(const LayerSpec& l, const Ten<T>& in, Ten<T>& out,
                     std::vector<int32_t>& argmax) {
  const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
  const int Ho = out.shape[1], Wo = out.shape[2];
  argmax.resize(static_cast<size_t>(C) * Ho * Wo);
  for (int c = 0; c < C; ++c) {
    const T* inc = in.ptr() + static_cast<size_t>(c) * H * W;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const int y0 = oy * l.stride, x0 = ox * l.stride;
        int best = y0 * W + x0;
        T bv = inc[best];
        for (int ky = 0; ky < l.kernel; ++ky)
          for (int kx = 0; kx < l.kernel; ++kx) {
            const int idx = (y0 + ky) * W + (x0 + kx);
            if (inc[idx] > bv) {
              bv = inc[idx];
              best = idx;
            }
          }
        const size_t o = (static_cast<size_t>(c) * Ho + oy) * Wo + ox;
        out.data[o] = bv;
        argmax[o] = static_cast<int32_t>(c * H * W + best);
      }
    }
  }
}

template <typename T>
void avgpool_forward(const LayerSpec& l, const Ten<T>& in, Ten<T>& out) {
  const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
  const int Ho = out.shape[1], Wo = out.shape[2];
  const T inv = T(1) / static_cast<T>(l.kernel * l.kernel);
  for (int c = 0; c < C; ++c) {
    const T* inc = in.ptr() + static_cast<size_t>(c) * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        T acc = 0;
        for (int ky = 0; ky < l.kernel; ++ky)
          for (int kx = 0; kx < l.kernel; ++kx)
            acc += inc[(oy * l.stride + ky) * W + (ox * l.stride + kx)];
        out.data[(static_cast<size_t>(c) * Ho + oy) * Wo + ox] = acc * inv;
      }
  }
}

template <typename T>
Ten<T> layer_forward(const LayerSpec& l, const Ten<T>& in, const Ten<T>* skip,
                     const WeightStoreT<T>& weights, const std::vector<int>& out_shape,
                     std::vector<int32_t>& argmax) {
  Ten<T> out(out_shape);
  switch (l.kind) {
    case LayerSpec::Kind::conv2d:
      conv2d_forward(l, in, weights.get(weight_key(l.name)), weights.get(bias_key(l.name)), out);
      break;
    case LayerSpec::Kind::relu:
      for (size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
      break;
    case LayerSpec::Kind::maxpool:
      maxpool_forward(l, in, out, argmax);
      break;
    case LayerSpec::Kind::avgpool:
      avgpool_forward(l, in, out);
      break;
    case LayerSpec::Kind::globalavgpool: {
      const int C = in.shape[0];
      const int64_t hw = static_cast<int64_t>(in.shape[1]) * in.shape[2];
      for (int c = 0; c < C; ++c) {
        T acc = 0;
        const T* inc = in.ptr() + static_cast<size_t>(c) * hw;
        for (int64_t i = 0; i < hw; ++i) acc += inc[i];
        out.data[static_cast<size_t>(c)] = acc / static_cast<T>(hw);
      }
      break;
    }
    case LayerSpec::Kind::dense:
      dense_forward(l, in, weights.get(weight_key(l.name)), weights.get(bias_key(l.name)), out);
      break;
    case LayerSpec::Kind::sigmoid:
      for (size_t i = 0; i < in.data.size(); ++i)
        out.data[i] = T(1) / (T(1) + std::exp(-in.data[i]));
      break;
    case LayerSpec::Kind::upsample_nearest: {
      const int C = in.shape[0], H = in.shape[1], W = in.shape[2], f = l.factor;
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H * f; ++y) {
          const T* src = in.ptr() + (static_cast<size_t>(c) * H + y / f) * W;
          T* dst = out.ptr() + (static_cast<size_t>(c) * H * f + y) * W * f;
          for (int x = 0; x < W * f; ++x) dst[x] = src[x / f];
        }
      break;
    }
    case LayerSpec::Kind::concat_skip: {
      std::copy(in.data.begin(), in.data.end(), out.data.begin());
      std::copy(skip->data.begin(), skip->data.end(), out.data.begin() + in.numel());
      break;
    }
  }
  return out;
}

template <typename T>
void check_param_shapes(const Network& net, const WeightStoreT<T>& weights) {
  for (const auto& l : net.layers) {
    if (!l.parametric()) continue;
    const auto& w = weights.get(weight_key(l.name));
    const auto& b = weights.get(bias_key(l.name));
    std::vector<int> want_w, want_b;
    if (l.kind == LayerSpec::Kind::conv2d) {
      want_w = {l.out_channels, l.in_channels, l.kernel, l.kernel};
      want_b = {l.out_channels};
    } else {
      want_w = {l.out_features, l.in_features};
      want_b = {l.out_features};
    }
    if (w.shape != want_w)
      fail(l.name, "weight shape " + shape_str(w.shape) + ", expected " + shape_str(want_w));
    if (b.shape != want_b)
      fail(l.name, "bias shape " + shape_str(b.shape) + ", expected " + shape_str(want_b));
  }
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const Network& net, const WeightStoreT<T>& weights, const Ten<T>& x) {
  if (x.shape != std::vector<int>{net.in_channels, net.in_h, net.in_w})
    throw ValidationError("forward: input shape " + shape_str(x.shape) + " does not match net " +
                          shape_str({net.in_channels, net.in_h, net.in_w}));
  check_param_shapes(net, weights);
  const auto shapes = net.infer_shapes();

  ForwardResult<T> r;
  r.tape.entries.resize(net.layers.size());
  r.tape.weights_hash = weights.content_hash();

  Ten<T> cur = x;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    r.tape.entries[i].input = std::move(cur);
    const Ten<T>* skip = nullptr;
    if (l.kind == LayerSpec::Kind::concat_skip) {
      // output of layer src is the input recorded at src+1 (through path)
      const int src = net.layer_index(l.skip_from);
      skip = &r.tape.entries[static_cast<size_t>(src) + 1].input;
    }
    cur = layer_forward(l, r.tape.entries[i].input, skip, weights, shapes[i],
                        r.tape.entries[i].argmax);
  }
  r.output = cur;
  r.tape.output = cur;
  return r;
}

// ---------------------------------------------------------------------------
// Backward kernels

namespace {

template <typename T>
void conv2d_backward(const LayerSpec& l, const Ten<T>& in, const Ten<T>& w, const Ten<T>& g_out,
                     Ten<T>& g_in, Ten<T>& g_w, Ten<T>& g_b) {
  const int H = in.shape[1], W = in.shape[2];
  const int Ho = g_out.shape[1], Wo = g_out.shape[2];
  const int k = l.kernel, s = l.stride, p = l.padding;
  for (int oc = 0; oc < l.out_channels; ++oc) {
    const T* gc = g_out.ptr() + static_cast<size_t>(oc) * Ho * Wo;
    T bacc = 0;
    for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) bacc += gc[i];
    g_b.data[static_cast<size_t>(oc)] += bacc;
    for (int ic = 0; ic < l.in_channels; ++ic) {
      const T* inc = in.ptr() + static_cast<size_t>(ic) * H * W;
      T* ginc = g_in.ptr() + static_cast<size_t>(ic) * H * W;
      T* gwk = g_w.ptr() + (static_cast<size_t>(oc) * l.in_channels + ic) * k * k;
      const T* wk = w.ptr() + (static_cast<size_t>(oc) * l.in_channels + ic) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          T wacc = 0;
          int ox_lo = 0, ox_hi = Wo;
          if (s == 1) {
            ox_lo = std::max(0, p - kx);
            ox_hi = std::min(Wo, W - 1 + p - kx + 1);
          } else {
            while (ox_lo < Wo && ox_lo * s - p + kx < 0) ++ox_lo;
            while (ox_hi > ox_lo && (ox_hi - 1) * s - p + kx >= W) --ox_hi;
          }
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= H) continue;
            const T* grow = gc + static_cast<size_t>(oy) * Wo;
            const T* inrow = inc + static_cast<size_t>(iy) * W;
            T* ginrow = ginc + static_cast<size_t>(iy) * W;
            if (s == 1) {
              const int off = kx - p;
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                wacc += inrow[ox + off] * grow[ox];
                ginrow[ox + off] += wv * grow[ox];
              }
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                const int ix = ox * s - p + kx;
                wacc += inrow[ix] * grow[ox];
                ginrow[ix] += wv * grow[ox];
              }
            }
          }
          gwk[ky * k + kx] += wacc;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BackwardResult<T> backward(const Network& net, const WeightStoreT<T>& weights,
                           const TapeT<T>& tape, const Ten<T>& seed, ReluRule rule,
                           const std::string& capture_layer) {
  if (tape.entries.size() != net.layers.size())
    throw ValidationError("backward: tape does not match network layer count");
  if (tape.weights_hash != weights.content_hash())
    throw ValidationError("backward: tape was recorded against a different weight store");
  if (seed.shape != tape.output.shape)
    throw ValidationError("backward: seed shape " + shape_str(seed.shape) +
                          " does not match output " + shape_str(tape.output.shape));

  BackwardResult<T> r;
  for (const auto& l : net.layers) {
    if (!l.parametric()) continue;
    Ten<T> gw(weights.get(weight_key(l.name)).shape);
    Ten<T> gb(weights.get(bias_key(l.name)).shape);
    r.weight_grads.put(weight_key(l.name), std::move(gw));
    r.weight_grads.put(bias_key(l.name), std::move(gb));
  }

  const int L = static_cast<int>(net.layers.size());
  const int capture_idx = capture_layer.empty() ? -1 : net.layer_index(capture_layer);
  // gradients parked for skip sources, keyed by source layer index
  std::vector<Ten<T>> pending(static_cast<size_t>(L));

  Ten<T> grad = seed;
  for (int i = L - 1; i >= 0; --i) {
    const auto& l = net.layers[i];
    const Ten<T>& in = tape.entries[static_cast<size_t>(i)].input;
    if (!pending[static_cast<size_t>(i)].data.empty()) {
      const auto& extra = pending[static_cast<size_t>(i)];
      for (size_t j = 0; j < grad.data.size(); ++j) grad.data[j] += extra.data[j];
    }
    if (i == capture_idx) {
      r.captured_grad = grad;
      r.captured_activation = (i + 1 < L) ? tape.entries[static_cast<size_t>(i) + 1].input
                                          : tape.output;
    }

    Ten<T> g_in(in.shape);
    switch (l.kind) {
      case LayerSpec::Kind::conv2d:
        conv2d_backward(l, in, weights.get(weight_key(l.name)), grad, g_in,
                        r.weight_grads.get_mutable(weight_key(l.name)),
                        r.weight_grads.get_mutable(bias_key(l.name)));
        break;
      case LayerSpec::Kind::relu:
        if (rule == ReluRule::guided) {
          for (size_t j = 0; j < in.data.size(); ++j)
            g_in.data[j] = (in.data[j] > T(0) && grad.data[j] > T(0)) ? grad.data[j] : T(0);
        } else {
          for (size_t j = 0; j < in.data.size(); ++j)
            g_in.data[j] = in.data[j] > T(0) ? grad.data[j] : T(0);
        }
        break;
      case LayerSpec::Kind::maxpool: {
        const auto& argmax = tape.entries[static_cast<size_t>(i)].argmax;
        for (size_t j = 0; j < grad.data.size(); ++j)
          g_in.data[static_cast<size_t>(argmax[j])] += grad.data[j];
        break;
      }
      case LayerSpec::Kind::avgpool: {
        const int C = in.shape[0], W = in.shape[2];
        const int Ho = grad.shape[1], Wo = grad.shape[2];
        const T inv = T(1) / static_cast<T>(l.kernel * l.kernel);
        for (int c = 0; c < C; ++c)
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
              const T g = grad.data[(static_cast<size_t>(c) * Ho + oy) * Wo + ox] * inv;
              T* ginc = g_in.ptr() + static_cast<size_t>(c) * in.shape[1] * W;
              for (int ky = 0; ky < l.kernel; ++ky)
                for (int kx = 0; kx < l.kernel; ++kx)
                  ginc[(oy * l.stride + ky) * W + (ox * l.stride + kx)] += g;
            }
        break;
      }
      case LayerSpec::Kind::globalavgpool: {
        const int C = in.shape[0];
        const int64_t hw = static_cast<int64_t>(in.shape[1]) * in.shape[2];
        const T inv = T(1) / static_cast<T>(hw);
        for (int c = 0; c < C; ++c) {
          const T g = grad.data[static_cast<size_t>(c)] * inv;
          T* ginc = g_in.ptr() + static_cast<size_t>(c) * hw;
          for (int64_t j = 0; j < hw; ++j) ginc[j] = g;
        }
        break;
      }
      case LayerSpec::Kind::dense: {
        const auto& w = weights.get(weight_key(l.name));
        auto& gw = r.weight_grads.get_mutable(weight_key(l.name));
        auto& gb = r.weight_grads.get_mutable(bias_key(l.name));
        for (int o = 0; o < l.out_features; ++o) {
          const T g = grad.data[static_cast<size_t>(o)];
          gb.data[static_cast<size_t>(o)] += g;
          const T* wr = w.ptr() + static_cast<size_t>(o) * l.in_features;
          T* gwr = gw.ptr() + static_cast<size_t>(o) * l.in_features;
          for (int j = 0; j < l.in_features; ++j) {
            gwr[j] += g * in.data[static_cast<size_t>(j)];
            g_in.data[static_cast<size_t>(j)] += g * wr[j];
          }
        }
        break;
      }
      case LayerSpec::Kind::sigmoid: {
        const Ten<T>& out = (i + 1 < L) ? tape.entries[static_cast<size_t>(i) + 1].input
                                        : tape.output;
        for (size_t j = 0; j < in.data.size(); ++j)
          g_in.data[j] = grad.data[j] * out.data[j] * (T(1) - out.data[j]);
        break;
      }
      case LayerSpec::Kind::upsample_nearest: {
        const int C = in.shape[0], H = in.shape[1], W = in.shape[2], f = l.factor;
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H * f; ++y) {
            const T* gr = grad.ptr() + (static_cast<size_t>(c) * H * f + y) * W * f;
            T* gi = g_in.ptr() + (static_cast<size_t>(c) * H + y / f) * W;
            for (int x = 0; x < W * f; ++x) gi[x / f] += gr[x];
          }
        break;
      }
      case LayerSpec::Kind::concat_skip: {
        const int src = net.layer_index(l.skip_from);
        const int64_t n_through = in.numel();
        std::copy(grad.data.begin(), grad.data.begin() + n_through, g_in.data.begin());
        Ten<T> g_skip(tape.entries[static_cast<size_t>(src) + 1].input.shape);
        std::copy(grad.data.begin() + n_through, grad.data.end(), g_skip.data.begin());
        auto& slot = pending[static_cast<size_t>(src)];
        if (slot.data.empty()) {
          slot = std::move(g_skip);
        } else {
          for (size_t j = 0; j < slot.data.size(); ++j) slot.data[j] += g_skip.data[j];
        }
        break;
      }
    }
    grad = std::move(g_in);
  }
  r.input_grad = std::move(grad);
  return r;
}

template <typename T>
Ten<T> backward_input(const Network& net, const WeightStoreT<T>& weights, const TapeT<T>& tape,
                      ReluRule rule) {
  if (tape.output.numel() != 1)
    throw ValidationError("backward_input: network output is not scalar, got " +
                          shape_str(tape.output.shape));
  Ten<T> seed(tape.output.shape);
  seed.data[0] = T(1);
  return backward(net, weights, tape, seed, rule).input_grad;
}

WeightStore init_weights(const Network& net, uint64_t seed, float stddev) {
  if (stddev < 0.0f) throw ValidationError("init_weights: stddev must be non-negative");
  WeightStore ws;
  int li = 0;
  for (const auto& l : net.layers) {
    if (!l.parametric()) {
      ++li;
      continue;
    }
    Rng rng(mix_seed(seed, static_cast<uint64_t>(li)));
    std::vector<int> wshape = l.kind == LayerSpec::Kind::conv2d
                                  ? std::vector<int>{l.out_channels, l.in_channels, l.kernel,
                                                     l.kernel}
                                  : std::vector<int>{l.out_features, l.in_features};
    std::vector<int> bshape = {l.kind == LayerSpec::Kind::conv2d ? l.out_channels
                                                                 : l.out_features};
    const int fan_in = l.kind == LayerSpec::Kind::conv2d ? l.in_channels * l.kernel * l.kernel
                                                         : l.in_features;
    const float spread =
        stddev > 0.0f ? stddev : std::sqrt(2.0f / static_cast<float>(fan_in));
    Ten<float> w(wshape);
    for (auto& v : w.data) v = static_cast<float>(rng.truncated_normal(spread));
    ws.put(weight_key(l.name), std::move(w));
    ws.put(bias_key(l.name), Ten<float>(bshape));
    ++li;
  }
  return ws;
}

template ForwardResult<float> forward(const Network&, const WeightStoreT<float>&,
                                      const Ten<float>&);
template ForwardResult<double> forward(const Network&, const WeightStoreT<double>&,
                                       const Ten<double>&);
template BackwardResult<float> backward(const Network&, const WeightStoreT<float>&,
                                        const TapeT<float>&, const Ten<float>&, ReluRule,
                                        const std::string&);
template BackwardResult<double> backward(const Network&, const WeightStoreT<double>&,
                                         const TapeT<double>&, const Ten<double>&, ReluRule,
                                         const std::string&);
template Ten<float> backward_input(const Network&, const WeightStoreT<float>&,
                                   const TapeT<float>&, ReluRule);
template Ten<double> backward_input(const Network&, const WeightStoreT<double>&,
                                    const TapeT<double>&, ReluRule);

}  // namespace salaudit
