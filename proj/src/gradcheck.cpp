// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/gradcheck.hpp"

#include <algorithm>

#include "calcseg/layers.hpp"
#include "calcseg/network.hpp"
#include "calcseg/objective.hpp"
#include "calcseg/random.hpp"

namespace calcseg {

using layers::Mode;
using D = double;

namespace {

Tensor<D> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Weighted sum against a fixed random tensor, so that no layer's gradient is
// trivially zero (a plain sum through batchnorm would be).
Var<D> project(const Var<D>& y, std::uint64_t seed) {
  Rng rng = derive_stream(seed, 99);
  return reduce_sum(mul(y, constant(random_tensor(y.shape(), rng))));
}

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t max, Rng& rng) {
  std::vector<std::size_t> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = i;
  if (n <= max) return c;
  for (std::size_t i = 0; i < max; ++i) std::swap(c[i], c[i + uniform_index(rng, n - i)]);
  c.resize(max);
  std::sort(c.begin(), c.end());
  return c;
}

BlockSpec block_spec(BlockKind kind, std::size_t f) {
  BlockSpec b;
  b.kind = kind;
  b.convs[0] = ConvSpec{f, {1, 3, 3}, {1, 1, 1}};
  b.convs[1] = ConvSpec{f, {3, 3, 3}, {1, 1, 1}};
  b.dropout.position = DropoutPosition::pre_add;
  b.dropout.p = 0.25;
  return b;
}

}  // namespace

NetworkConfig gradcheck_network() {
  return parse_network_config(nlohmann::json::parse(R"({
    "name": "gradcheck",
    "input_channels": 1,
    "input_offset": 130.0,
    "input_scale": 400.0,
    "head_batchnorm": true,
    "layers": [
      {"name": "stem1", "type": "conv", "features": 2, "kernel": [1, 3, 3], "preact": false},
      {"name": "block1", "type": "block", "kind": "residual",
       "convs": [{"features": 2, "kernel": [3, 1, 1]}, {"features": 2, "kernel": [1, 1, 1]}],
       "dropout": {"position": "pre_add", "p": 0.2, "variant": "element"}},
      {"name": "down1", "type": "conv", "features": 3, "kernel": [2, 2, 2], "stride": [2, 2, 2]},
      {"name": "block2", "type": "block", "kind": "residual",
       "convs": [{"features": 3, "kernel": [1, 3, 3]}, {"features": 3, "kernel": [1, 1, 1]}],
       "dropout": {"position": "pre_add", "p": 0.3, "variant": "element"}},
      {"name": "block3", "type": "block", "kind": "residual",
       "convs": [{"features": 3, "kernel": [1, 1, 1]}, {"features": 3, "kernel": [1, 1, 1]}],
       "dropout": {"position": "pre_add", "p": 0.3, "variant": "element"}},
      {"name": "up1", "type": "upsample", "factor": [2, 2, 2]},
      {"name": "cat1", "type": "concat", "from": ["block1", "up1"]},
      {"name": "merge1", "type": "conv", "features": 2, "kernel": [1, 1, 1]},
      {"name": "block4", "type": "block", "kind": "residual",
       "convs": [{"features": 2, "kernel": [1, 3, 3]}, {"features": 2, "kernel": [1, 1, 1]}],
       "dropout": {"position": "pre_add", "p": 0.2, "variant": "element"}}
    ],
    "aux_heads": ["stem1", "block1", "down1", "block2", "block3", "merge1"]
  })"));
}

std::vector<GradCheck> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheck> out;
  Rng rng = derive_stream(seed, 0);
  auto check = [&](const std::string& name, const ScalarFn& f, const Tensor<D>& x, double eps = 3e-4,
                   std::size_t max_coords = 64) {
    Rng pick = derive_stream(seed, out.size() + 1000);
    const auto coords = sample_coords(x.size(), max_coords, pick);
    out.push_back({name, finite_diff_check(f, x, eps, coords)});
  };
  const std::uint64_t ps = seed;

  {  // convolution, stride 1 and strided, each operand
    const Tensor<D> x = random_tensor({2, 4, 5, 6}, rng);
    const Tensor<D> w = random_tensor({3, 2, 2, 3, 2}, rng);
    const Tensor<D> b = random_tensor({3}, rng);
    for (const Extent3 s : {Extent3{1, 1, 1}, Extent3{1, 2, 2}, Extent3{2, 1, 3}}) {
      const std::string tag = "conv3d_valid stride " + extent_to_string(s);
      check(tag + " input", [&](const Var<D>& v) { return project(layers::conv3d_valid(v, constant(w), constant(b), s), ps); }, x);
      check(tag + " weight", [&](const Var<D>& v) { return project(layers::conv3d_valid(constant(x), v, constant(b), s), ps); }, w);
      check(tag + " bias", [&](const Var<D>& v) { return project(layers::conv3d_valid(constant(x), constant(w), v, s), ps); }, b);
    }
  }
  {
    const Tensor<D> x = random_tensor({2, 2, 3, 2}, rng);
    check("upsample_nn", [&](const Var<D>& v) { return project(layers::upsample_nn(v, {2, 1, 3}), ps); }, x);
  }
  {
    const Tensor<D> x = random_tensor({3, 2, 3, 4}, rng, -2.0, 2.0);
    const Tensor<D> gamma = random_tensor({3}, rng, 0.5, 1.5);
    const Tensor<D> beta = random_tensor({3}, rng);
    layers::BNState<D> fixed(3);
    fixed.updates = 1;
    fixed.running_mean = random_tensor({3}, rng);
    fixed.running_var = random_tensor({3}, rng, 0.5, 2.0);
    auto bn = [&](const Var<D>& xv, const Var<D>& g, const Var<D>& b, Mode m) {
      layers::BNState<D> st = fixed;
      return project(layers::batchnorm(xv, g, b, st, m), ps);
    };
    check("batchnorm train input", [&](const Var<D>& v) { return bn(v, constant(gamma), constant(beta), Mode::train); }, x);
    check("batchnorm train gamma", [&](const Var<D>& v) { return bn(constant(x), v, constant(beta), Mode::train); }, gamma);
    check("batchnorm train beta", [&](const Var<D>& v) { return bn(constant(x), constant(gamma), v, Mode::train); }, beta);
    check("batchnorm eval input", [&](const Var<D>& v) { return bn(v, constant(gamma), constant(beta), Mode::eval); }, x);
  }
  {
    const Tensor<D> x = random_tensor({2, 3, 3, 3}, rng);
    check("relu", [&](const Var<D>& v) { return project(layers::relu(v), ps); }, x);
    check("sigmoid", [&](const Var<D>& v) { return project(layers::sigmoid(v), ps); }, x);
    std::vector<std::uint8_t> keep(x.size());
    for (auto& k : keep) k = uniform01(rng) < 0.6;
    check("dropout element", [&](const Var<D>& v) {
      return project(layers::dropout_with_mask(v, keep, 0.4, layers::DropoutVariant::element), ps);
    }, x);
    const std::vector<std::uint8_t> keep_f{1, 0};
    check("dropout spatial", [&](const Var<D>& v) {
      return project(layers::dropout_with_mask(v, keep_f, 0.5, layers::DropoutVariant::spatial), ps);
    }, x);
    check("crop_window", [&](const Var<D>& v) { return project(layers::crop_window(v, {1, 0, 1}, {2, 2, 1}), ps); }, x);
    const Tensor<D> big = random_tensor({2, 5, 3, 5}, rng);
    check("crop_center", [&](const Var<D>& v) { return project(layers::crop_center(v, {3, 3, 1}), ps); }, big);
    const Tensor<D> other = random_tensor({1, 3, 3, 3}, rng);
    check("concat_features first", [&](const Var<D>& v) { return project(layers::concat_features(v, constant(other)), ps); }, x);
    check("concat_features second", [&](const Var<D>& v) { return project(layers::concat_features(constant(x), v), ps); }, other);
    const Tensor<D> bias = random_tensor({2}, rng);
    check("add_bias input", [&](const Var<D>& v) { return project(layers::add_bias(v, constant(bias)), ps); }, x);
    check("add_bias bias", [&](const Var<D>& v) { return project(layers::add_bias(constant(x), v), ps); }, bias);
  }
  for (BlockKind kind : {BlockKind::residual, BlockKind::plain}) {
    const std::size_t f = 2;
    const BlockSpec spec = block_spec(kind, f);
    const Tensor<D> x = random_tensor({f, 5, 6, 6}, rng, -2.0, 2.0);
    BlockParams<D> p;
    layers::BNState<D> s1(f), s2(f);
    p.bn1 = &s1;
    p.bn2 = &s2;
    p.bn1_gamma = constant(random_tensor({f}, rng, 0.5, 1.5));
    p.bn1_beta = constant(random_tensor({f}, rng));
    p.bn2_gamma = constant(random_tensor({f}, rng, 0.5, 1.5));
    p.bn2_beta = constant(random_tensor({f}, rng));
    p.w1 = constant(random_tensor({f, f, 1, 3, 3}, rng));
    p.w2 = constant(random_tensor({f, f, 3, 3, 3}, rng));
    p.b2 = constant(random_tensor({f}, rng));
    std::vector<std::uint8_t> keep(f * 3 * 2 * 2);
    for (auto& k : keep) k = uniform01(rng) < 0.7;
    const std::string tag = kind == BlockKind::residual ? "residual block" : "plain block";
    check(tag + " input", [&](const Var<D>& v) {
      Rng unused(0);
      return project(apply_block(spec, p, v, Mode::train, unused, &keep), ps);
    }, x);
    check(tag + " conv2 weight", [&](const Var<D>& v) {
      BlockParams<D> q = p;
      q.w2 = v;
      Rng unused(0);
      return project(apply_block(spec, q, constant(x), Mode::train, unused, &keep), ps);
    }, p.w2.value());
  }
  {
    const Tensor<D> z = random_tensor({1, 3, 4, 4}, rng, -3.0, 3.0);
    Tensor<D> y(z.shape());
    std::vector<std::uint8_t> mask(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      y[i] = uniform01(rng) < 0.3 ? 1.0 : 0.0;
      mask[i] = uniform01(rng) < 0.7;
    }
    check("masked_weighted_bce", [&](const Var<D>& v) { return masked_weighted_bce(v, y, mask, 7.0).loss; }, z);
  }
  {  // full masked deeply supervised loss of a small network
    const NetworkConfig cfg = gradcheck_network();
    Network<D> net = Network<float>::build(cfg, seed).cast<D>();
    const Extent3 in{6, 12, 12};
    const Geometry g = plan(cfg, in);
    Tensor<D> x({1, in[0], in[1], in[2]});
    for (auto& v : x.data()) v = uniform(rng, -100.0, 500.0);
    Tensor<D> labels({1, g.out[0], g.out[1], g.out[2]});
    std::vector<std::uint8_t> mask(labels.size());
    std::size_t k = 0;
    for (std::size_t d = 0; d < g.out[0]; ++d) {
      for (std::size_t h = 0; h < g.out[1]; ++h) {
        for (std::size_t w = 0; w < g.out[2]; ++w, ++k) {
          const double hu = x.at(0, d + g.label_offset[0], h + g.label_offset[1], w + g.label_offset[2]);
          mask[k] = hu > kCalcificationHu;
          labels[k] = uniform01(rng) < 0.4 ? 1.0 : 0.0;
        }
      }
    }
    const std::array<D, kAuxHeads> weights{0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
    auto loss = [&](const Var<D>& input, std::vector<Var<D>> params) {
      Rng drop = derive_stream(seed, 7);  // same dropout masks on every evaluation
      const ForwardResult<D> r = net.forward_bound(input, std::move(params), Mode::train, drop);
      std::array<Var<D>, kAuxHeads> aux;
      for (std::size_t a = 0; a < kAuxHeads; ++a) aux[a] = masked_weighted_bce(r.aux_logit[a], labels, mask, 3.0).loss;
      return total_loss<D>(masked_weighted_bce(r.logit, labels, mask, 3.0).loss, aux, weights);
    };
    auto constants = [&] {
      std::vector<Var<D>> p;
      for (const auto& q : net.parameters()) p.push_back(constant(q.value));
      return p;
    };
    check("network loss input", [&](const Var<D>& v) { return loss(v, constants()); }, x, 0.1, 48);
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
      check("network loss " + net.parameters()[i].name, [&, i](const Var<D>& v) {
        auto p = constants();
        p[i] = v;
        return loss(constant(x), std::move(p));
      }, net.parameters()[i].value, 3e-4, 12);
    }
  }
  return out;
}

bool gradcheck_passed(const GradCheck& c, double tol) {
  return c.report.checked > 0 && c.report.max_rel_error < tol;
}

}  // namespace calcseg
