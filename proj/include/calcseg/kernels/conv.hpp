// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

#include "calcseg/tensor.hpp"

namespace calcseg::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best instruction set the running CPU supports (and this build compiled).
Isa detected_isa();

/// Instruction set currently used by conv_kernels<float>(). Defaults to detected_isa().
Isa active_isa();

/// Override the active instruction set. Throws ContractError if the CPU lacks it.
void set_isa(Isa isa);

/// Geometry of one valid, strided 3D cross-correlation.
struct ConvGeometry {
  std::size_t channels_in = 0;
  std::size_t channels_out = 0;
  Extent3 in{};
  Extent3 kernel{};
  Extent3 stride{1, 1, 1};

  Extent3 out() const;
  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
};

/// Raw kernels over contiguous buffers.
///   forward:     y[K,out] = sum over c and taps of w[K,C,k] * x[C,in]   (overwrites y)
///   weight_grad: dw[K,C,k] = sum over output voxels of dy * x          (overwrites dw)
/// Each output element is produced by a single thread in a fixed order, so
/// results do not depend on the thread count.
template <typename T>
struct ConvKernels {
  void (*forward)(const ConvGeometry& g, const T* x, const T* w, T* y);
  void (*weight_grad)(const ConvGeometry& g, const T* x, const T* dy, T* dw);
};

template <typename T>
const ConvKernels<T>& conv_kernels(Isa isa);

/// Kernels for the active instruction set. Doubles always use the scalar table.
template <typename T>
const ConvKernels<T>& conv_kernels() {
  return conv_kernels<T>(active_isa());
}

/// Input gradient of a strided valid convolution, computed as a stride-1
/// forward pass of the flipped, transposed kernel over the dilated and padded
/// output gradient. Overwrites dx.
template <typename T>
void conv_input_grad(const ConvKernels<T>& k, const ConvGeometry& g, const T* w, const T* dy, T* dx);

}  // namespace calcseg::kernels
