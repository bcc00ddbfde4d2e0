// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "calcseg/error.hpp"
#include "calcseg/network.hpp"
#include "unit/oracles.hpp"

using namespace calcseg;
using layers::Mode;

namespace {

NetworkConfig benchmark_net() { return load_network_config(oracle::source_path("configs/benchmark_net.json")); }

}  // namespace

TEST_CASE("forward produces main and aux maps on the output grid") {
  const NetworkConfig cfg = benchmark_net();
  Network<float> net = Network<float>::build(cfg, 11);
  std::mt19937_64 g(1);
  const Extent3 in{32, 80, 80};
  const auto x = oracle::random_tensor<float>({1, in[0], in[1], in[2]}, g, -200.0, 900.0);
  Rng rng = derive_stream(1, 2);
  const auto r = net.forward(x, Mode::train, rng);
  const Extent3 out = output_shape(cfg, in);
  CHECK(r.logit.shape() == Shape{1, out[0], out[1], out[2]});
  for (std::size_t h = 0; h < kAuxHeads; ++h) CHECK(r.aux_logit[h].shape() == r.logit.shape());
  const Tensor<float> prob = r.probability();
  for (float p : prob.data()) CHECK((p >= 0.0f && p <= 1.0f));
  CHECK(r.geometry.label_offset == plan(cfg, in).label_offset);
}

TEST_CASE("build is a pure function of config and seed") {
  const NetworkConfig cfg = benchmark_net();
  const auto a = Network<float>::build(cfg, 4);
  const auto b = Network<float>::build(cfg, 4);
  const auto c = Network<float>::build(cfg, 5);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    all_same = all_same && a.parameters()[i].value == b.parameters()[i].value;
    any_diff = any_diff || !(a.parameters()[i].value == c.parameters()[i].value);
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("He initialization has the fan-in variance") {
  const auto net = Network<double>::build(benchmark_net(), 9);
  for (const auto& p : net.parameters()) {
    if (p.name != "block2.conv1.weight") continue;
    const double fan_in = static_cast<double>(p.value.size() / p.value.dim(0));
    double s = 0.0, s2 = 0.0;
    for (double v : p.value.data()) {
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(p.value.size());
    CHECK(std::abs(s / n) < 4.0 * std::sqrt(2.0 / fan_in / n));
    CHECK(s2 / n == doctest::Approx(2.0 / fan_in).epsilon(0.1));
  }
}

TEST_CASE("eval forward is deterministic and matches a double cast") {
  Network<float> net = Network<float>::build(benchmark_net(), 2);
  std::mt19937_64 g(3);
  const auto x = oracle::random_tensor<float>({1, 24, 40, 40}, g, -100.0, 800.0);
  Rng rng = derive_stream(0, 0);
  net.forward(x, Mode::train, rng);  // populates running statistics
  const auto a = net.forward(x, Mode::eval, rng).logit.value();
  const auto b = net.forward(x, Mode::eval, rng).logit.value();
  CHECK(a == b);
  Network<double> wide = net.cast<double>();
  const auto c = wide.forward(tensor_cast<double>(x), Mode::eval, rng).logit.value();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - c[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("eval before any training step is rejected") {
  Network<float> net = Network<float>::build(benchmark_net(), 2);
  Rng rng = derive_stream(0, 0);
  CHECK_THROWS_AS(net.forward(Tensor<float>(Shape{1, 24, 40, 40}), Mode::eval, rng), ContractError);
}

TEST_CASE("forward validates its input") {
  Network<float> net = Network<float>::build(benchmark_net(), 2);
  Rng rng = derive_stream(0, 0);
  CHECK_THROWS_AS(net.forward(Tensor<float>(Shape{24, 40, 40}), Mode::train, rng), ShapeError);
  CHECK_THROWS_AS(net.forward(Tensor<float>(Shape{2, 24, 40, 40}), Mode::train, rng), ShapeError);
  CHECK_THROWS_AS(net.forward(Tensor<float>(Shape{1, 8, 40, 40}), Mode::train, rng), ShapeError);
  std::vector<Var<float>> params;
  CHECK_THROWS_AS(net.forward_bound(constant(Tensor<float>(Shape{1, 24, 40, 40})), params, Mode::train, rng),
                  ContractError);
}

TEST_CASE("parameter names are unique") {
  const auto net = Network<float>::build(benchmark_net(), 1);
  std::set<std::string> names;
  for (const auto& p : net.parameters()) CHECK(names.insert(p.name).second);
}
