#ifndef SALAUDIT_TENSOR_HPP
#define SALAUDIT_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace salaudit {

// Raised on contract violations (bad shapes, bad arguments, malformed files).
// The CLI maps these to exit code 1; anything else is an internal error.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major N-dimensional array. The engine runs on float; tests
// instantiate the same kernels with double for finite-difference oracles.
template <typename T>
struct Ten {
  std::vector<int> shape;
  std::vector<T> data;

  Ten() = default;
  explicit Ten(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), T(0));
  }
  Ten(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != static_cast<size_t>(count(shape)))
      throw ValidationError("tensor: data length does not match shape product");
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ValidationError("tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // CHW indexing for 3-d tensors.
  T& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  T at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  // HW indexing for 2-d tensors.
  T& at(int y, int x) { return data[static_cast<size_t>(y) * shape[1] + x]; }
  T at(int y, int x) const { return data[static_cast<size_t>(y) * shape[1] + x]; }

  bool same_shape(const Ten& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  T min_value() const {
    T m = data.empty() ? T(0) : data[0];
    for (T v : data) m = v < m ? v : m;
    return m;
  }
  T max_value() const {
    T m = data.empty() ? T(0) : data[0];
    for (T v : data) m = v > m ? v : m;
    return m;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Ten<U> cast() const {
    Ten<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = Ten<float>;

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += "x";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

}  // namespace salaudit

#endif  // SALAUDIT_TENSOR_HPP
