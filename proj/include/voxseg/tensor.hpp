#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxseg {

// Dense row-major N-d array. For 3D volumes the axis order is (x, y, z)
// with x fastest, matching the NIfTI on-disk layout; for network activations
// the order is (N, C, D, H, W) with W fastest.
template <typename T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel(shape)), T(0));
  }
  Tensor(std::vector<std::int64_t> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static std::int64_t numel(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // 3D access, x fastest
  T& at3(std::int64_t x, std::int64_t y, std::int64_t z) {
    return data[static_cast<std::size_t>(x + shape[0] * (y + shape[1] * z))];
  }
  const T& at3(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data[static_cast<std::size_t>(x + shape[0] * (y + shape[1] * z))];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TensorU8 = Tensor<std::uint8_t>;

inline std::string shape_str(const std::vector<std::int64_t>& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

}  // namespace voxseg
