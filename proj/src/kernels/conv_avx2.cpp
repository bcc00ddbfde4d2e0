// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 -mfma. Nothing here may run before dispatch has
// confirmed CPU support.

#if defined(CALCSEG_HAVE_AVX2_TU)

#include <immintrin.h>

#include <algorithm>
#include <cstdint>

#include "conv_impl.hpp"

namespace calcseg::kernels::detail {

namespace {

inline __m256i tail_mask(std::size_t n) {
  const __m256i lanes = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
  return _mm256_cmpgt_epi32(_mm256_set1_epi32(static_cast<int>(n)), lanes);
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 0x55));
  return _mm_cvtss_f32(lo);
}

// Accumulates NV vectors of one output row segment starting at column ow.
template <int NV>
inline void row_block(const ConvGeometry& g, const float* x, const float* wk_base, std::size_t od,
                      std::size_t oh, std::size_t ow, float* yr) {
  const auto [D, H, W] = g.in;
  const auto [kd, kh, kw] = g.kernel;
  const std::size_t taps = kd * kh * kw;
  __m256 acc[NV];
  for (int i = 0; i < NV; ++i) acc[i] = _mm256_setzero_ps();
  for (std::size_t c = 0; c < g.channels_in; ++c) {
    const float* wk = wk_base + c * taps;
    for (std::size_t a = 0; a < kd; ++a) {
      const float* xs = x + (c * D + od * g.stride[0] + a) * H * W + ow;
      for (std::size_t b = 0; b < kh; ++b) {
        const float* xr = xs + (oh * g.stride[1] + b) * W;
        for (std::size_t e = 0; e < kw; ++e) {
          const __m256 wv = _mm256_broadcast_ss(wk + (a * kh + b) * kw + e);
          for (int i = 0; i < NV; ++i) acc[i] = _mm256_fmadd_ps(wv, _mm256_loadu_ps(xr + e + 8 * i), acc[i]);
        }
      }
    }
  }
  for (int i = 0; i < NV; ++i) _mm256_storeu_ps(yr + ow + 8 * i, acc[i]);
}

inline void row_tail(const ConvGeometry& g, const float* x, const float* wk_base, std::size_t od,
                     std::size_t oh, std::size_t ow, std::size_t n, float* yr) {
  const auto [D, H, W] = g.in;
  const auto [kd, kh, kw] = g.kernel;
  const std::size_t taps = kd * kh * kw;
  const __m256i m = tail_mask(n);
  __m256 acc = _mm256_setzero_ps();
  for (std::size_t c = 0; c < g.channels_in; ++c) {
    const float* wk = wk_base + c * taps;
    for (std::size_t a = 0; a < kd; ++a) {
      const float* xs = x + (c * D + od * g.stride[0] + a) * H * W + ow;
      for (std::size_t b = 0; b < kh; ++b) {
        const float* xr = xs + (oh * g.stride[1] + b) * W;
        for (std::size_t e = 0; e < kw; ++e) {
          const __m256 wv = _mm256_broadcast_ss(wk + (a * kh + b) * kw + e);
          acc = _mm256_fmadd_ps(wv, _mm256_maskload_ps(xr + e, m), acc);
        }
      }
    }
  }
  _mm256_maskstore_ps(yr + ow, m, acc);
}

}  // namespace

void forward_avx2(const ConvGeometry& g, const float* x, const float* w, float* y) {
  if (g.stride[2] != 1) {
    forward_scalar<float>(g, x, w, y);
    return;
  }
  const Extent3 o = g.out();
  const std::size_t taps = g.kernel_volume();
  const long tasks = static_cast<long>(g.channels_out * o[0]);

#pragma omp parallel for schedule(static)
  for (long t = 0; t < tasks; ++t) {
    const std::size_t k = static_cast<std::size_t>(t) / o[0];
    const std::size_t od = static_cast<std::size_t>(t) % o[0];
    const float* wk = w + k * g.channels_in * taps;
    for (std::size_t oh = 0; oh < o[1]; ++oh) {
      float* yr = y + ((k * o[0] + od) * o[1] + oh) * o[2];
      std::size_t ow = 0;
      for (; ow + 32 <= o[2]; ow += 32) row_block<4>(g, x, wk, od, oh, ow, yr);
      for (; ow + 8 <= o[2]; ow += 8) row_block<1>(g, x, wk, od, oh, ow, yr);
      if (ow < o[2]) row_tail(g, x, wk, od, oh, ow, o[2] - ow, yr);
    }
  }
}

void weight_grad_avx2(const ConvGeometry& g, const float* x, const float* dy, float* dw) {
  constexpr std::size_t kMaxKw = 8;
  if (g.stride[2] != 1 || g.kernel[2] > kMaxKw) {
    weight_grad_scalar<float>(g, x, dy, dw);
    return;
  }
  const Extent3 o = g.out();
  const auto [D, H, W] = g.in;
  const auto [kd, kh, kw] = g.kernel;
  const std::size_t C = g.channels_in;
  const std::size_t full = o[2] / 8 * 8;
  const __m256i m = tail_mask(o[2] - full);
  const long tasks = static_cast<long>(g.channels_out * C);

#pragma omp parallel for schedule(static)
  for (long t = 0; t < tasks; ++t) {
    const std::size_t k = static_cast<std::size_t>(t) / C;
    const std::size_t c = static_cast<std::size_t>(t) % C;
    float* dwp = dw + (k * C + c) * kd * kh * kw;
    const float* dyk = dy + k * o[0] * o[1] * o[2];
    for (std::size_t a = 0; a < kd; ++a) {
      for (std::size_t b = 0; b < kh; ++b) {
        __m256 acc[kMaxKw];
        for (std::size_t e = 0; e < kw; ++e) acc[e] = _mm256_setzero_ps();
        for (std::size_t od = 0; od < o[0]; ++od) {
          const float* xs = x + (c * D + od * g.stride[0] + a) * H * W;
          for (std::size_t oh = 0; oh < o[1]; ++oh) {
            const float* xr = xs + (oh * g.stride[1] + b) * W;
            const float* dr = dyk + (od * o[1] + oh) * o[2];
            std::size_t ow = 0;
            for (; ow < full; ow += 8) {
              const __m256 dv = _mm256_loadu_ps(dr + ow);
              for (std::size_t e = 0; e < kw; ++e) {
                acc[e] = _mm256_fmadd_ps(dv, _mm256_loadu_ps(xr + ow + e), acc[e]);
              }
            }
            if (ow < o[2]) {
              const __m256 dv = _mm256_maskload_ps(dr + ow, m);
              for (std::size_t e = 0; e < kw; ++e) {
                acc[e] = _mm256_fmadd_ps(dv, _mm256_maskload_ps(xr + ow + e, m), acc[e]);
              }
            }
          }
        }
        for (std::size_t e = 0; e < kw; ++e) dwp[(a * kh + b) * kw + e] = hsum(acc[e]);
      }
    }
  }
}

}  // namespace calcseg::kernels::detail

#endif  // CALCSEG_HAVE_AVX2_TU
