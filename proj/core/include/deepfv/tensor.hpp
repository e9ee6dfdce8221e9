#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "deepfv/common.hpp"

namespace deepfv {

// Dense row-major tensor. An empty dims list is a scalar (one element).
template <typename T>
struct TensorT {
  std::vector<std::size_t> dims;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<std::size_t> d, T fill = T(0))
      : dims(std::move(d)) {
    data.assign(numel_of(dims), fill);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return dims.size(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at(std::size_t i, std::size_t j) { return data[i * dims[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const {
    return data[i * dims[1] + j];
  }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * dims[1] + j) * dims[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * dims[1] + j) * dims[2] + k];
  }

  std::span<T> row(std::size_t i) {
    return std::span<T>(data).subspan(i * dims[1], dims[1]);
  }
  std::span<const T> row(std::size_t i) const {
    return std::span<const T>(data).subspan(i * dims[1], dims[1]);
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const TensorT& o) const { return dims == o.dims; }

  friend bool operator==(const TensorT& a, const TensorT& b) {
    return a.dims == b.dims && a.data == b.data;
  }
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

}  // namespace deepfv
