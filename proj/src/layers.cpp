// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/layers.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "calcseg/error.hpp"
#include "calcseg/kernels/conv.hpp"

namespace calcseg::layers {

namespace {

template <typename T>
void require_rank(const Var<T>& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_to_string(x.shape()));
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Tape<T>* tape_of(std::initializer_list<const Var<T>*> vars) {
  return common_tape<T>(vars);
}

}  // namespace

template <typename T>
Var<T> conv3d_valid(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const Extent3& stride) {
  require_rank(x, 4, "conv3d_valid input");
  require_rank(w, 5, "conv3d_valid weights");
  kernels::ConvGeometry g;
  g.channels_in = x.value().dim(0);
  g.channels_out = w.value().dim(0);
  g.in = x.value().spatial();
  g.kernel = {w.value().dim(2), w.value().dim(3), w.value().dim(4)};
  g.stride = stride;
  if (w.value().dim(1) != g.channels_in) {
    throw ShapeError("conv3d_valid: kernel expects " + std::to_string(w.value().dim(1)) +
                     " input features, input has " + std::to_string(g.channels_in));
  }
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && bias.shape() != Shape{g.channels_out}) {
    throw ShapeError("conv3d_valid: bias shape " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(g.channels_out) + " output features");
  }
  const Extent3 o = g.out();
  const auto& kern = kernels::conv_kernels<T>();
  Tensor<T> y(Shape{g.channels_out, o[0], o[1], o[2]});
  kern.forward(g, x.value().raw(), w.value().raw(), y.raw());
  const std::size_t plane = o[0] * o[1] * o[2];
  if (has_bias) {
    for (std::size_t k = 0; k < g.channels_out; ++k) {
      const T b = bias.value()[k];
      T* yp = y.raw() + k * plane;
      for (std::size_t i = 0; i < plane; ++i) yp[i] += b;
    }
  }
  Tape<T>* tape = has_bias ? tape_of<T>({&x, &w, &bias}) : tape_of<T>({&x, &w});
  if (!tape) return constant(std::move(y));
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return tape->record(std::move(y), std::move(inputs), [g, plane, &kern](Node<T>& n) {
    const Tensor<T>& dy = n.grad;
    Node<T>& xn = *n.inputs[0];
    Node<T>& wn = *n.inputs[1];
    if (xn.tracked()) {
      Tensor<T> dx(xn.value.shape());
      kernels::conv_input_grad(kern, g, wn.value.raw(), dy.raw(), dx.raw());
      accumulate(xn.grad_buffer(), dx);
    }
    if (wn.tracked()) {
      Tensor<T> dw(wn.value.shape());
      kern.weight_grad(g, xn.value.raw(), dy.raw(), dw.raw());
      accumulate(wn.grad_buffer(), dw);
    }
    if (n.inputs.size() > 2 && n.inputs[2]->tracked()) {
      auto& db = n.inputs[2]->grad_buffer();
      for (std::size_t k = 0; k < g.channels_out; ++k) {
        double acc = 0.0;
        const T* dp = dy.raw() + k * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += dp[i];
        db[k] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  require_rank(x, 4, "add_bias");
  const std::size_t C = x.value().dim(0);
  if (bias.shape() != Shape{C}) throw ShapeError("add_bias: bias shape " + shape_to_string(bias.shape()));
  const std::size_t plane = x.value().size() / std::max<std::size_t>(C, 1);
  Tensor<T> y = x.value();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] += bias.value()[c];
  }
  Tape<T>* tape = tape_of<T>({&x, &bias});
  if (!tape) return constant(std::move(y));
  return tape->record(std::move(y), {x, bias}, [C, plane](Node<T>& n) {
    if (n.inputs[0]->tracked()) accumulate(n.inputs[0]->grad_buffer(), n.grad);
    if (n.inputs[1]->tracked()) {
      auto& db = n.inputs[1]->grad_buffer();
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += n.grad[c * plane + i];
        db[c] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Var<T> upsample_nn(const Var<T>& x, const Extent3& f) {
  require_rank(x, 4, "upsample_nn");
  if (f[0] == 0 || f[1] == 0 || f[2] == 0) throw ContractError("upsample_nn: factors must be >= 1");
  const std::size_t C = x.value().dim(0);
  const Extent3 in = x.value().spatial();
  const Extent3 out{in[0] * f[0], in[1] * f[1], in[2] * f[2]};
  Tensor<T> y(Shape{C, out[0], out[1], out[2]});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t d = 0; d < out[0]; ++d) {
      for (std::size_t h = 0; h < out[1]; ++h) {
        const T* src = &x.value().at(c, d / f[0], h / f[1], 0);
        T* dst = &y.at(c, d, h, 0);
        for (std::size_t w = 0; w < out[2]; ++w) dst[w] = src[w / f[2]];
      }
    }
  }
  if (!x.tracked()) return constant(std::move(y));
  return x.node().tape->record(std::move(y), {x}, [C, in, out, f](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t d = 0; d < out[0]; ++d) {
        for (std::size_t h = 0; h < out[1]; ++h) {
          const T* src = &n.grad.at(c, d, h, 0);
          T* dst = &g.at(c, d / f[0], h / f[1], 0);
          for (std::size_t w = 0; w < out[2]; ++w) dst[w / f[2]] += src[w];
        }
      }
    }
    (void)in;
  });
}

template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BNState<T>& state, Mode mode) {
  require_rank(x, 4, "batchnorm");
  const std::size_t C = x.value().dim(0);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C} || state.running_mean.shape() != Shape{C} ||
      state.running_var.shape() != Shape{C}) {
    throw ShapeError("batchnorm: parameters do not match " + std::to_string(C) + " features");
  }
  const std::size_t N = C ? x.value().size() / C : 0;
  if (mode == Mode::eval && state.updates == 0) {
    throw ContractError("batchnorm: eval mode before any running-statistics update");
  }
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(C);
  Tensor<T> y(x.shape());
  const T* xv = x.value().raw();
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = xv + c * N;
    T mean;
    T var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) s += xc[i];
      const double m = s / static_cast<double>(N);
      double ss = 0.0;
      for (std::size_t i = 0; i < N; ++i) ss += (xc[i] - m) * (xc[i] - m);
      const double v = ss / static_cast<double>(N);
      mean = static_cast<T>(m);
      var = static_cast<T>(v);
      const double unbiased = N > 1 ? ss / static_cast<double>(N - 1) : v;
      state.running_mean[c] = (T{1} - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] =
          (T{1} - state.momentum) * state.running_var[c] + state.momentum * static_cast<T>(unbiased);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const T is = T{1} / std::sqrt(var + state.eps);
    (*inv_std)[c] = is;
    const T gm = gamma.value()[c];
    const T bt = beta.value()[c];
    T* hc = xhat->raw() + c * N;
    T* yc = y.raw() + c * N;
    for (std::size_t i = 0; i < N; ++i) {
      hc[i] = (xc[i] - mean) * is;
      yc[i] = gm * hc[i] + bt;
    }
  }
  if (mode == Mode::train) ++state.updates;
  Tape<T>* tape = tape_of<T>({&x, &gamma, &beta});
  if (!tape) return constant(std::move(y));
  const bool train = mode == Mode::train;
  return tape->record(std::move(y), {x, gamma, beta}, [C, N, xhat, inv_std, train](Node<T>& n) {
    const Tensor<T>& dy = n.grad;
    const Tensor<T>& gm = n.inputs[1]->value;
    const bool want_x = n.inputs[0]->tracked();
    const bool want_g = n.inputs[1]->tracked();
    const bool want_b = n.inputs[2]->tracked();
    for (std::size_t c = 0; c < C; ++c) {
      const T* dyc = dy.raw() + c * N;
      const T* hc = xhat->raw() + c * N;
      double sum_dy = 0.0;
      double sum_dyh = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        sum_dy += dyc[i];
        sum_dyh += static_cast<double>(dyc[i]) * hc[i];
      }
      if (want_g) n.inputs[1]->grad_buffer()[c] += static_cast<T>(sum_dyh);
      if (want_b) n.inputs[2]->grad_buffer()[c] += static_cast<T>(sum_dy);
      if (!want_x) continue;
      T* dxc = n.inputs[0]->grad_buffer().raw() + c * N;
      const T k = gm[c] * (*inv_std)[c];
      if (train) {
        const T mdy = static_cast<T>(sum_dy / static_cast<double>(N));
        const T mdyh = static_cast<T>(sum_dyh / static_cast<double>(N));
        for (std::size_t i = 0; i < N; ++i) dxc[i] += k * (dyc[i] - mdy - hc[i] * mdyh);
      } else {
        for (std::size_t i = 0; i < N; ++i) dxc[i] += k * dyc[i];
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return max0(x);
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) {
    if (v >= T{0}) {
      v = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T{1} + e);
    }
  }
  if (!x.tracked()) return constant(std::move(y));
  return x.node().tape->record(std::move(y), {x}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i] * (T{1} - n.value[i]);
  });
}

template <typename T>
Var<T> dropout_with_mask(const Var<T>& x, const std::vector<std::uint8_t>& keep, double p,
                         DropoutVariant variant) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  const std::size_t C = x.value().rank() ? x.value().dim(0) : 1;
  const std::size_t per = variant == DropoutVariant::spatial ? (C ? x.value().size() / C : 0) : 1;
  const std::size_t expected = variant == DropoutVariant::spatial ? C : x.value().size();
  if (keep.size() != expected) {
    throw ContractError("dropout: mask has " + std::to_string(keep.size()) + " entries, expected " +
                        std::to_string(expected));
  }
  const T s = static_cast<T>(1.0 / (1.0 - p));
  auto factor = std::make_shared<std::vector<T>>(x.value().size());
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*factor)[i] = keep[i / per] ? s : T{0};
    y[i] *= (*factor)[i];
  }
  if (!x.tracked()) return constant(std::move(y));
  return x.node().tape->record(std::move(y), {x}, [factor](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (*factor)[i];
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, DropoutVariant variant, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  const std::size_t n = variant == DropoutVariant::spatial ? x.value().dim(0) : x.value().size();
  std::vector<std::uint8_t> keep(n);
  for (auto& k : keep) k = uniform01(rng) >= p ? 1 : 0;
  return dropout_with_mask(x, keep, p, variant);
}

template <typename T>
Var<T> crop_window(const Var<T>& x, const Extent3& offset, const Extent3& size) {
  require_rank(x, 4, "crop_window");
  const Extent3 in = x.value().spatial();
  for (int a = 0; a < 3; ++a) {
    if (offset[a] + size[a] > in[a]) {
      throw ShapeError("crop_window: window " + extent_to_string(offset) + "+" + extent_to_string(size) +
                       " exceeds extent " + extent_to_string(in));
    }
  }
  const std::size_t C = x.value().dim(0);
  Tensor<T> y(Shape{C, size[0], size[1], size[2]});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t d = 0; d < size[0]; ++d) {
      for (std::size_t h = 0; h < size[1]; ++h) {
        const T* src = &x.value().at(c, d + offset[0], h + offset[1], offset[2]);
        std::copy(src, src + size[2], &y.at(c, d, h, 0));
      }
    }
  }
  if (!x.tracked()) return constant(std::move(y));
  return x.node().tape->record(std::move(y), {x}, [C, offset, size](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t d = 0; d < size[0]; ++d) {
        for (std::size_t h = 0; h < size[1]; ++h) {
          const T* src = &n.grad.at(c, d, h, 0);
          T* dst = &g.at(c, d + offset[0], h + offset[1], offset[2]);
          for (std::size_t w = 0; w < size[2]; ++w) dst[w] += src[w];
        }
      }
    }
  });
}

template <typename T>
Var<T> crop_center(const Var<T>& x, const Extent3& target) {
  require_rank(x, 4, "crop_center");
  const Extent3 in = x.value().spatial();
  Extent3 offset{};
  for (int a = 0; a < 3; ++a) {
    if (target[a] > in[a] || (in[a] - target[a]) % 2 != 0) {
      throw ShapeError("crop_center: cannot crop " + extent_to_string(in) + " symmetrically to " +
                       extent_to_string(target));
    }
    offset[a] = (in[a] - target[a]) / 2;
  }
  if (target == in) return x;
  return crop_window(x, offset, target);
}

template <typename T>
Var<T> concat_features(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 4, "concat_features");
  require_rank(b, 4, "concat_features");
  if (a.value().spatial() != b.value().spatial()) {
    throw ShapeError("concat_features: spatial extents differ " + extent_to_string(a.value().spatial()) + " vs " +
                     extent_to_string(b.value().spatial()));
  }
  const Extent3 s = a.value().spatial();
  const std::size_t na = a.value().size();
  std::vector<T> data;
  data.reserve(na + b.value().size());
  data.insert(data.end(), a.value().data().begin(), a.value().data().end());
  data.insert(data.end(), b.value().data().begin(), b.value().data().end());
  Tensor<T> y(Shape{a.value().dim(0) + b.value().dim(0), s[0], s[1], s[2]}, std::move(data));
  Tape<T>* tape = tape_of<T>({&a, &b});
  if (!tape) return constant(std::move(y));
  return tape->record(std::move(y), {a, b}, [na](Node<T>& n) {
    if (n.inputs[0]->tracked()) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.inputs[1]->tracked()) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[na + i];
    }
  });
}

#define CALCSEG_INSTANTIATE(T)                                                                          \
  template Var<T> conv3d_valid<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Extent3&);         \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> upsample_nn<T>(const Var<T>&, const Extent3&);                                        \
  template Var<T> batchnorm<T>(const Var<T>&, const Var<T>&, const Var<T>&, BNState<T>&, Mode);         \
  template Var<T> relu<T>(const Var<T>&);                                                               \
  template Var<T> sigmoid<T>(const Var<T>&);                                                            \
  template Var<T> dropout<T>(const Var<T>&, double, Mode, DropoutVariant, Rng&);                        \
  template Var<T> dropout_with_mask<T>(const Var<T>&, const std::vector<std::uint8_t>&, double,         \
                                       DropoutVariant);                                                 \
  template Var<T> crop_window<T>(const Var<T>&, const Extent3&, const Extent3&);                        \
  template Var<T> crop_center<T>(const Var<T>&, const Extent3&);                                        \
  template Var<T> concat_features<T>(const Var<T>&, const Var<T>&);

CALCSEG_INSTANTIATE(float)
CALCSEG_INSTANTIATE(double)

#undef CALCSEG_INSTANTIATE

}  // namespace calcseg::layers
