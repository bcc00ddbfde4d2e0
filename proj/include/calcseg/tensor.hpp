// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace calcseg {

using Shape = std::vector<std::size_t>;

/// Spatial extents in (depth, height, width) order. Depth is the longitudinal axis.
using Extent3 = std::array<std::size_t, 3>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);
std::string extent_to_string(const Extent3& e);

/// Dense row-major tensor. Activations use (feature, depth, height, width);
/// there is no batch axis.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T{1}); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const T* raw() const noexcept { return data_.data(); }
  T* raw() noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element at a 4-d (feature, depth, height, width) index.
  T& at(std::size_t f, std::size_t d, std::size_t h, std::size_t w);
  const T& at(std::size_t f, std::size_t d, std::size_t h, std::size_t w) const;

  /// Value of a rank-0 or single-element tensor.
  T item() const;

  /// Spatial extents of a 4-d activation.
  Extent3 spatial() const;

  void fill(T v);
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(out));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace calcseg
