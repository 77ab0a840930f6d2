#ifndef SALAUDIT_NET_HPP
#define SALAUDIT_NET_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "salaudit/tensor.hpp"

namespace salaudit {

struct LayerSpec {
  enum class Kind {
    conv2d,
    relu,
    maxpool,
    avgpool,
    globalavgpool,
    dense,
    sigmoid,
    upsample_nearest,
    concat_skip,
  };

  Kind kind = Kind::relu;
  std::string name;

  // conv2d
  int in_channels = 0, out_channels = 0, kernel = 0, stride = 1, padding = 0;
  // maxpool / avgpool reuse kernel and stride
  // dense
  int in_features = 0, out_features = 0;
  // upsample_nearest
  int factor = 2;
  // concat_skip: name of an earlier layer whose output is appended channelwise
  std::string skip_from;

  bool parametric() const { return kind == Kind::conv2d || kind == Kind::dense; }

  static LayerSpec conv(std::string name, int in_c, int out_c, int k, int stride = 1,
                        int padding = 0);
  static LayerSpec relu_layer(std::string name);
  static LayerSpec maxpool_layer(std::string name, int k = 2, int stride = 2);
  static LayerSpec avgpool_layer(std::string name, int k = 2, int stride = 2);
  static LayerSpec globalavgpool_layer(std::string name);
  static LayerSpec dense_layer(std::string name, int in_f, int out_f);
  static LayerSpec sigmoid_layer(std::string name);
  static LayerSpec upsample(std::string name, int factor = 2);
  static LayerSpec concat(std::string name, std::string skip_from);

  static const char* kind_name(Kind k);
};

// Ordered list of layers plus the expected input shape (single channel image
// unless stated otherwise). Construction validates names and hyperparameters;
// shape propagation is validated against a concrete input via infer_shapes.
struct Network {
  std::vector<LayerSpec> layers;
  int in_channels = 1;
  int in_h = 0;
  int in_w = 0;

  Network() = default;
  Network(std::vector<LayerSpec> ls, int c, int h, int w);

  const LayerSpec& layer(const std::string& name) const;
  int layer_index(const std::string& name) const;
  // Name of the deepest conv2d layer; throws if the net has none.
  std::string last_conv_layer() const;

  // Output shape of every layer for the declared input, validating as it goes.
  std::vector<std::vector<int>> infer_shapes() const;

 private:
  std::unordered_map<std::string, int> index_;
};

// Named tensor store with stable (insertion) order. Order matters twice: the
// weight file format round-trips byte-exact, and block randomization walks
// entries deterministically.
template <typename T>
class WeightStoreT {
 public:
  void put(const std::string& name, Ten<T> t);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Ten<T>& get(const std::string& name) const;
  Ten<T>& get_mutable(const std::string& name);

  size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  // FNV-1a over names, shapes and raw values; cached until mutation.
  uint64_t content_hash() const;

  template <typename U>
  WeightStoreT<U> cast() const {
    WeightStoreT<U> out;
    for (size_t i = 0; i < names_.size(); ++i) out.put(names_[i], tensors_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Ten<T>> tensors_;
  std::unordered_map<std::string, size_t> index_;
  mutable uint64_t hash_ = 0;
  mutable bool hash_valid_ = false;
};

using WeightStore = WeightStoreT<float>;

inline std::string weight_key(const std::string& layer) { return layer + ".weight"; }
inline std::string bias_key(const std::string& layer) { return layer + ".bias"; }

// Cached forward activations. entries[i].input is the tensor fed into layer i
// along the through path; a layer's output is the next entry's input. Tapes
// are single-use snapshots: backward on an unchanged tape is bit-repeatable.
template <typename T>
struct TapeT {
  struct Entry {
    Ten<T> input;
    std::vector<int32_t> argmax;  // maxpool only
  };
  std::vector<Entry> entries;
  Ten<T> output;
  uint64_t weights_hash = 0;
};

using Tape = TapeT<float>;

enum class ReluRule { standard, guided };

template <typename T>
struct ForwardResult {
  Ten<T> output;
  TapeT<T> tape;
};

template <typename T>
struct BackwardResult {
  Ten<T> input_grad;
  WeightStoreT<T> weight_grads;
  Ten<T> captured_grad;        // d(output)/d(activation) of capture_layer
  Ten<T> captured_activation;  // that layer's forward output
};

// Runs the net on x and records the tape needed for an exact backward pass.
template <typename T>
ForwardResult<T> forward(const Network& net, const WeightStoreT<T>& weights, const Ten<T>& x);

// Propagates seed (gradient w.r.t. the network output) back to the input and
// all parameters. Under ReluRule::guided every ReLU additionally zeroes
// positions whose incoming gradient is negative. capture_layer, when
// non-empty, names a layer whose output gradient and activation are returned.
template <typename T>
BackwardResult<T> backward(const Network& net, const WeightStoreT<T>& weights,
                           const TapeT<T>& tape, const Ten<T>& seed,
                           ReluRule rule = ReluRule::standard,
                           const std::string& capture_layer = {});

// Gradient of the scalar network output w.r.t. the input image.
template <typename T>
Ten<T> backward_input(const Network& net, const WeightStoreT<T>& weights, const TapeT<T>& tape,
                      ReluRule rule = ReluRule::standard);

// Fresh store for net: truncated-normal weights, zero biases, deterministic
// in seed. stddev 0 selects the sqrt(2/fan_in) per-layer spread used for
// training; a positive stddev fixes one spread for every layer (block
// randomization passes 0.05).
WeightStore init_weights(const Network& net, uint64_t seed, float stddev = 0.0f);

}  // namespace salaudit

#endif  // SALAUDIT_NET_HPP
