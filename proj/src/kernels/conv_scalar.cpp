// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>

#include "conv_impl.hpp"

namespace calcseg::kernels::detail {

template <typename T>
void forward_scalar(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const Extent3 o = g.out();
  const auto [D, H, W] = g.in;
  const auto [kd, kh, kw] = g.kernel;
  const auto [sd, sh, sw] = g.stride;
  const std::size_t C = g.channels_in;
  const std::size_t plane = o[1] * o[2];
  const long tasks = static_cast<long>(g.channels_out * o[0]);

#pragma omp parallel for schedule(static)
  for (long t = 0; t < tasks; ++t) {
    const std::size_t k = static_cast<std::size_t>(t) / o[0];
    const std::size_t od = static_cast<std::size_t>(t) % o[0];
    T* yp = y + (k * o[0] + od) * plane;
    std::memset(yp, 0, plane * sizeof(T));
    for (std::size_t c = 0; c < C; ++c) {
      const T* wk = w + (k * C + c) * kd * kh * kw;
      for (std::size_t a = 0; a < kd; ++a) {
        const T* xs = x + (c * D + od * sd + a) * H * W;
        for (std::size_t b = 0; b < kh; ++b) {
          for (std::size_t e = 0; e < kw; ++e) {
            const T wv = wk[(a * kh + b) * kw + e];
            for (std::size_t oh = 0; oh < o[1]; ++oh) {
              const T* xr = xs + (oh * sh + b) * W + e;
              T* yr = yp + oh * o[2];
              for (std::size_t ow = 0; ow < o[2]; ++ow) yr[ow] += wv * xr[ow * sw];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void weight_grad_scalar(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const Extent3 o = g.out();
  const auto [D, H, W] = g.in;
  const auto [kd, kh, kw] = g.kernel;
  const auto [sd, sh, sw] = g.stride;
  const std::size_t C = g.channels_in;
  const long tasks = static_cast<long>(g.channels_out * C);

#pragma omp parallel for schedule(static)
  for (long t = 0; t < tasks; ++t) {
    const std::size_t k = static_cast<std::size_t>(t) / C;
    const std::size_t c = static_cast<std::size_t>(t) % C;
    T* dwp = dw + (k * C + c) * kd * kh * kw;
    const T* dyk = dy + k * o[0] * o[1] * o[2];
    for (std::size_t a = 0; a < kd; ++a) {
      for (std::size_t b = 0; b < kh; ++b) {
        for (std::size_t e = 0; e < kw; ++e) {
          T acc = 0;
          for (std::size_t od = 0; od < o[0]; ++od) {
            const T* xs = x + (c * D + od * sd + a) * H * W;
            for (std::size_t oh = 0; oh < o[1]; ++oh) {
              const T* xr = xs + (oh * sh + b) * W + e;
              const T* dr = dyk + (od * o[1] + oh) * o[2];
              for (std::size_t ow = 0; ow < o[2]; ++ow) acc += dr[ow] * xr[ow * sw];
            }
          }
          dwp[(a * kh + b) * kw + e] = acc;
        }
      }
    }
  }
}

template void forward_scalar<float>(const ConvGeometry&, const float*, const float*, float*);
template void forward_scalar<double>(const ConvGeometry&, const double*, const double*, double*);
template void weight_grad_scalar<float>(const ConvGeometry&, const float*, const float*, float*);
template void weight_grad_scalar<double>(const ConvGeometry&, const double*, const double*, double*);

}  // namespace calcseg::kernels::detail
