// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "calcseg/autodiff.hpp"
#include "calcseg/random.hpp"
#include "calcseg/tensor.hpp"

namespace calcseg::layers {

enum class Mode { train, eval };
enum class DropoutVariant { element, spatial };

/// Valid (unpadded) strided 3D cross-correlation.
/// x: (C,D,H,W), w: (K,C,kd,kh,kw), bias: (K) or an empty Var for none.
template <typename T>
Var<T> conv3d_valid(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const Extent3& stride);

/// Nearest-neighbour upsampling: each voxel is repeated factor times per axis.
template <typename T>
Var<T> upsample_nn(const Var<T>& x, const Extent3& factors);

/// Running statistics of one batch-normalization layer.
template <typename T>
struct BNState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  std::uint64_t updates = 0;

  BNState() = default;
  explicit BNState(std::size_t features)
      : running_mean(Shape{features}, T{0}), running_var(Shape{features}, T{1}) {}
};

/// Train mode normalizes with the patch's per-feature spatial statistics
/// (biased variance) and folds them into the running averages (unbiased
/// variance). Eval mode uses the running averages and throws ContractError if
/// they have never been updated.
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BNState<T>& state, Mode mode);

template <typename T>
Var<T> relu(const Var<T>& x);

/// Logistic sigmoid, evaluated without overflow for any finite input.
template <typename T>
Var<T> sigmoid(const Var<T>& x);

/// Inverted dropout. Train mode zeroes elements (or whole feature maps for
/// the spatial variant) with probability p and scales survivors by 1/(1-p);
/// eval mode and p == 0 are the identity.
template <typename T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, DropoutVariant variant, Rng& rng);

/// Dropout with a caller-chosen keep mask. For the element variant the mask
/// has x's shape; for the spatial variant it has one entry per feature.
/// Kept entries are scaled by 1/(1-p).
template <typename T>
Var<T> dropout_with_mask(const Var<T>& x, const std::vector<std::uint8_t>& keep, double p,
                         DropoutVariant variant);

/// Spatial window [offset, offset + size) of a 4-d activation.
template <typename T>
Var<T> crop_window(const Var<T>& x, const Extent3& offset, const Extent3& size);

/// Central crop. Margins must be even so the crop is symmetric.
template <typename T>
Var<T> crop_center(const Var<T>& x, const Extent3& target);

/// Feature-axis concatenation of two activations with equal spatial extents.
template <typename T>
Var<T> concat_features(const Var<T>& a, const Var<T>& b);

/// Adds a per-feature bias to a 4-d activation.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias);

}  // namespace calcseg::layers
