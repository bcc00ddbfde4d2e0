// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <vector>

#include "calcseg/error.hpp"
#include "conv_impl.hpp"

namespace calcseg::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(CALCSEG_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{detected_isa()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

Isa detected_isa() {
  static const Isa isa = cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
  return isa;
}

Isa active_isa() { return active_slot().load(); }

void set_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2) {
    throw ContractError("avx2 kernels requested but not supported on this CPU");
  }
  active_slot().store(isa);
}

Extent3 ConvGeometry::out() const {
  Extent3 o{};
  static constexpr const char* kAxis[3] = {"depth", "height", "width"};
  for (int i = 0; i < 3; ++i) {
    if (kernel[i] == 0 || stride[i] == 0) throw ContractError("kernel and stride extents must be >= 1");
    if (in[i] < kernel[i]) {
      throw ShapeError(std::string("input ") + kAxis[i] + " extent " + std::to_string(in[i]) +
                       " is smaller than kernel extent " + std::to_string(kernel[i]));
    }
    o[i] = (in[i] - kernel[i]) / stride[i] + 1;
  }
  return o;
}

template <>
const ConvKernels<double>& conv_kernels<double>(Isa) {
  static const ConvKernels<double> table{&detail::forward_scalar<double>, &detail::weight_grad_scalar<double>};
  return table;
}

template <>
const ConvKernels<float>& conv_kernels<float>(Isa isa) {
  static const ConvKernels<float> scalar{&detail::forward_scalar<float>, &detail::weight_grad_scalar<float>};
#if defined(CALCSEG_HAVE_AVX2_TU)
  static const ConvKernels<float> avx2{&detail::forward_avx2, &detail::weight_grad_avx2};
  if (isa == Isa::avx2) {
    if (detected_isa() != Isa::avx2) throw ContractError("avx2 kernels not supported on this CPU");
    return avx2;
  }
#else
  if (isa == Isa::avx2) throw ContractError("avx2 kernels not compiled into this build");
#endif
  return scalar;
}

template <typename T>
void conv_input_grad(const ConvKernels<T>& k, const ConvGeometry& g, const T* w, const T* dy, T* dx) {
  const Extent3 o = g.out();
  const std::size_t K = g.channels_out;
  const std::size_t C = g.channels_in;
  Extent3 padded{};
  for (int i = 0; i < 3; ++i) {
    const std::size_t rem = (g.in[i] - g.kernel[i]) % g.stride[i];
    padded[i] = (o[i] - 1) * g.stride[i] + 1 + 2 * (g.kernel[i] - 1) + rem;
  }
  std::vector<T> dyp(K * padded[0] * padded[1] * padded[2], T{0});
  for (std::size_t kk = 0; kk < K; ++kk) {
    for (std::size_t od = 0; od < o[0]; ++od) {
      for (std::size_t oh = 0; oh < o[1]; ++oh) {
        const T* src = dy + ((kk * o[0] + od) * o[1] + oh) * o[2];
        T* dst = dyp.data() +
                 ((kk * padded[0] + g.kernel[0] - 1 + od * g.stride[0]) * padded[1] + g.kernel[1] - 1 +
                  oh * g.stride[1]) * padded[2] + g.kernel[2] - 1;
        for (std::size_t ow = 0; ow < o[2]; ++ow) dst[ow * g.stride[2]] = src[ow];
      }
    }
  }
  const std::size_t taps = g.kernel_volume();
  std::vector<T> wt(C * K * taps);
  for (std::size_t kk = 0; kk < K; ++kk) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = w + (kk * C + c) * taps;
      T* dst = wt.data() + (c * K + kk) * taps;
      for (std::size_t t = 0; t < taps; ++t) dst[t] = src[taps - 1 - t];
    }
  }
  ConvGeometry back;
  back.channels_in = K;
  back.channels_out = C;
  back.in = padded;
  back.kernel = g.kernel;
  back.stride = {1, 1, 1};
  k.forward(back, dyp.data(), wt.data(), dx);
}

template void conv_input_grad<float>(const ConvKernels<float>&, const ConvGeometry&, const float*, const float*,
                                     float*);
template void conv_input_grad<double>(const ConvKernels<double>&, const ConvGeometry&, const double*,
                                      const double*, double*);

}  // namespace calcseg::kernels
