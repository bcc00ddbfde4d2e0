// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include <omp.h>

#include "calcseg/error.hpp"
#include "calcseg/kernels/conv.hpp"
#include "calcseg/layers.hpp"
#include "unit/oracles.hpp"

using namespace calcseg;
using calcseg::kernels::Isa;

namespace {

struct Case {
  std::size_t c, k;
  Extent3 in, kernel, stride;
};

Case random_case(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  Case cs;
  cs.c = pick(1, 4);
  cs.k = pick(1, 5);
  for (int a = 0; a < 3; ++a) {
    cs.kernel[a] = pick(1, 3);
    cs.stride[a] = pick(1, 2);
    cs.in[a] = cs.kernel[a] + pick(0, 9);
  }
  cs.in[2] += pick(0, 12);  // rows long enough for the vector paths
  return cs;
}

float max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  REQUIRE(a.shape() == b.shape());
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv3d_valid matches the direct loop on random cases") {
  std::mt19937_64 rng(20260101);
  for (int n = 0; n < 40; ++n) {
    const Case cs = random_case(rng);
    const auto x = oracle::random_tensor<float>({cs.c, cs.in[0], cs.in[1], cs.in[2]}, rng);
    const auto w = oracle::random_tensor<float>({cs.k, cs.c, cs.kernel[0], cs.kernel[1], cs.kernel[2]}, rng);
    const auto b = oracle::random_tensor<float>({cs.k}, rng);
    const auto want = oracle::conv3d(x, w, &b, cs.stride);
    const auto got = layers::conv3d_valid(constant(x), constant(w), constant(b), cs.stride).value();
    INFO("case " << n << " in " << extent_to_string(cs.in) << " kernel " << extent_to_string(cs.kernel) << " stride "
                 << extent_to_string(cs.stride));
    CHECK(max_abs_diff(got, want) < 1e-5f);
  }
}

TEST_CASE("scalar and avx2 kernels agree") {
  if (kernels::detected_isa() != Isa::avx2) {
    MESSAGE("avx2 unavailable; skipping");
    return;
  }
  std::mt19937_64 rng(7);
  for (int n = 0; n < 30; ++n) {
    const Case cs = random_case(rng);
    kernels::ConvGeometry g{cs.c, cs.k, cs.in, cs.kernel, cs.stride};
    const Extent3 o = g.out();
    const auto x = oracle::random_tensor<float>({cs.c, cs.in[0], cs.in[1], cs.in[2]}, rng);
    const auto w = oracle::random_tensor<float>({cs.k, cs.c, cs.kernel[0], cs.kernel[1], cs.kernel[2]}, rng);
    const auto dy = oracle::random_tensor<float>({cs.k, o[0], o[1], o[2]}, rng);
    const auto& s = kernels::conv_kernels<float>(Isa::scalar);
    const auto& v = kernels::conv_kernels<float>(Isa::avx2);
    Tensor<float> ys(dy.shape()), yv(dy.shape()), gs(w.shape()), gv(w.shape()), xs(x.shape()), xv(x.shape());
    s.forward(g, x.raw(), w.raw(), ys.raw());
    v.forward(g, x.raw(), w.raw(), yv.raw());
    s.weight_grad(g, x.raw(), dy.raw(), gs.raw());
    v.weight_grad(g, x.raw(), dy.raw(), gv.raw());
    kernels::conv_input_grad(s, g, w.raw(), dy.raw(), xs.raw());
    kernels::conv_input_grad(v, g, w.raw(), dy.raw(), xv.raw());
    CHECK(max_abs_diff(ys, yv) < 1e-5f);
    CHECK(max_abs_diff(gs, gv) < 1e-4f);
    CHECK(max_abs_diff(xs, xv) < 1e-5f);
  }
}

TEST_CASE("input gradient matches the adjoint of the direct loop") {
  // <conv(x), dy> = <x, conv_input_grad(dy)> for every x, dy.
  std::mt19937_64 rng(99);
  for (int n = 0; n < 20; ++n) {
    const Case cs = random_case(rng);
    kernels::ConvGeometry g{cs.c, cs.k, cs.in, cs.kernel, cs.stride};
    const Extent3 o = g.out();
    const auto x = oracle::random_tensor<double>({cs.c, cs.in[0], cs.in[1], cs.in[2]}, rng);
    const auto w = oracle::random_tensor<double>({cs.k, cs.c, cs.kernel[0], cs.kernel[1], cs.kernel[2]}, rng);
    const auto dy = oracle::random_tensor<double>({cs.k, o[0], o[1], o[2]}, rng);
    const auto y = oracle::conv3d(x, w, static_cast<const Tensor<double>*>(nullptr), cs.stride);
    Tensor<double> dx(x.shape());
    kernels::conv_input_grad(kernels::conv_kernels<double>(), g, w.raw(), dy.raw(), dx.raw());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * dx[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("conv results do not depend on the thread count") {
  std::mt19937_64 rng(3);
  const auto x = oracle::random_tensor<float>({3, 6, 20, 21}, rng);
  const auto w = oracle::random_tensor<float>({4, 3, 3, 3, 3}, rng);
  omp_set_num_threads(1);
  const auto a = layers::conv3d_valid(constant(x), constant(w), Var<float>(), {1, 1, 1}).value();
  omp_set_num_threads(3);
  const auto b = layers::conv3d_valid(constant(x), constant(w), Var<float>(), {1, 1, 1}).value();
  omp_set_num_threads(omp_get_num_procs());
  CHECK(a == b);
}

TEST_CASE("conv shape errors") {
  kernels::ConvGeometry g{1, 1, {2, 5, 5}, {3, 3, 3}, {1, 1, 1}};
  CHECK_THROWS_AS(g.out(), ShapeError);
  const Tensor<float> x(Shape{2, 4, 4, 4});
  const Tensor<float> w(Shape{1, 3, 2, 2, 2});
  CHECK_THROWS_AS(layers::conv3d_valid(constant(x), constant(w), Var<float>(), {1, 1, 1}), ShapeError);
}

TEST_CASE("documented conv examples") {
  // 1x1x1 kernel of weight 2 doubles the input; a 2x2x2 box of ones sums it.
  Tensor<float> x(Shape{1, 2, 2, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  const auto y = layers::conv3d_valid(constant(x), constant(Tensor<float>(Shape{1, 1, 1, 1, 1}, 2.0f)), Var<float>(),
                                      {1, 1, 1}).value();
  CHECK(y[7] == 16.0f);
  const auto s = layers::conv3d_valid(constant(x), constant(Tensor<float>(Shape{1, 1, 2, 2, 2}, 1.0f)), Var<float>(),
                                      {1, 1, 1}).value();
  CHECK(s.size() == 1);
  CHECK(s[0] == 36.0f);
}
