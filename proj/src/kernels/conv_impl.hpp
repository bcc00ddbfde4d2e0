// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "calcseg/kernels/conv.hpp"

namespace calcseg::kernels::detail {

template <typename T>
void forward_scalar(const ConvGeometry& g, const T* x, const T* w, T* y);
template <typename T>
void weight_grad_scalar(const ConvGeometry& g, const T* x, const T* dy, T* dw);

#if defined(CALCSEG_HAVE_AVX2_TU)
void forward_avx2(const ConvGeometry& g, const float* x, const float* w, float* y);
void weight_grad_avx2(const ConvGeometry& g, const float* x, const float* dy, float* dw);
#endif

}  // namespace calcseg::kernels::detail
