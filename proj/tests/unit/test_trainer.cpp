// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <fstream>
#include <iterator>

#include "calcseg/dataset.hpp"
#include "calcseg/error.hpp"
#include "calcseg/trainer.hpp"
#include "unit/oracles.hpp"

using namespace calcseg;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json small_train_json(const std::string& dataset, const std::string& out) {
  return json{{"network", oracle::source_path("configs/benchmark_net.json")},
              {"dataset", dataset},
              {"out_dir", out},
              {"patch", {16, 48, 48}},
              {"epochs", 2},
              {"seed", 5},
              {"schedule", {{"lr_initial", 1e-4}, {"lr_final", 1e-5}, {"pos_weight_initial", 10.0}}}};
}

}  // namespace

TEST_CASE("momentum SGD worked example") {
  std::vector<Network<float>::Parameter> params{{"w", Tensor<float>(Shape{2}, std::vector<float>{1.0f, -2.0f})}};
  OptimizerState st{{Tensor<float>(Shape{2})}};
  const Tensor<float> g(Shape{2}, std::vector<float>{0.5f, 1.0f});
  sgd_momentum_step(params, {&g}, st, 0.1, 0.9);
  // v = -0.05, -0.1
  CHECK(params[0].value[0] == doctest::Approx(0.95f));
  CHECK(params[0].value[1] == doctest::Approx(-2.1f));
  sgd_momentum_step(params, {&g}, st, 0.1, 0.9);
  // v = 0.9 * v - 0.1 g = -0.095, -0.19
  CHECK(st.velocity[0][0] == doctest::Approx(-0.095f));
  CHECK(params[0].value[0] == doctest::Approx(0.855f));
  CHECK(params[0].value[1] == doctest::Approx(-2.29f));
}

TEST_CASE("SGD refuses non-finite gradients before updating") {
  std::vector<Network<float>::Parameter> params{{"a", Tensor<float>(Shape{1}, 1.0f)}, {"b", Tensor<float>(Shape{1}, 2.0f)}};
  OptimizerState st{{Tensor<float>(Shape{1}), Tensor<float>(Shape{1})}};
  const Tensor<float> ok(Shape{1}, 1.0f), bad(Shape{1}, NAN);
  CHECK_THROWS_WITH_AS(sgd_momentum_step(params, {&ok, &bad}, st, 0.1, 0.9), doctest::Contains("b"), NumericError);
  CHECK(params[0].value[0] == 1.0f);
  CHECK_THROWS_AS(sgd_momentum_step(params, {&ok}, st, 0.1, 0.9), ContractError);
}

TEST_CASE("patch corners are uniform") {
  Volume v({6, 5, 4}, kDefaultSpacing);
  LabelVolume l({6, 5, 4}, kDefaultSpacing, 0);
  Rng rng = derive_stream(3, 1);
  const Extent3 size{3, 3, 2};
  const std::size_t cells = 4 * 3 * 3, draws = 36000;
  std::vector<std::size_t> hits(cells, 0);
  for (std::size_t i = 0; i < draws; ++i) {
    const Patch p = sample_patch(v, l, size, rng);
    ++hits[(p.corner[0] * 3 + p.corner[1]) * 3 + p.corner[2]];
  }
  double chi2 = 0.0;
  const double e = double(draws) / cells;
  for (auto h : hits) chi2 += (h - e) * (h - e) / e;
  const boost::math::chi_squared dist(cells - 1);
  CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 1e-3);
  CHECK_THROWS_AS(sample_patch(v, l, {7, 1, 1}, rng), ContractError);
}

TEST_CASE("patches copy the right window and flips mirror the width axis") {
  Volume v({3, 4, 5}, kDefaultSpacing);
  LabelVolume l({3, 4, 5}, kDefaultSpacing, 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v.data[i] = float(i);
    l.data[i] = i % 3 == 0;
  }
  Rng rng = derive_stream(1, 1);
  Patch p = sample_patch(v, l, {2, 2, 3}, rng);
  const Extent3 c = p.corner;
  CHECK(p.image.at(1, 1, 2) == v.at(c[0] + 1, c[1] + 1, c[2] + 2));
  const Patch orig = p;
  flip_frontal(p);
  CHECK(p.flipped);
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 3; ++w) {
        CHECK(p.image.at(d, h, w) == orig.image.at(d, h, 2 - w));
        CHECK(p.label.at(d, h, w) == orig.label.at(d, h, 2 - w));
      }
  flip_frontal(p);
  CHECK(p.image.data == orig.image.data);
}

TEST_CASE("train config parsing") {
  const auto dir = oracle::temp_dir("train_cfg");
  const TrainConfig c = parse_train_config(small_train_json("data/manifest.csv", "run"), dir.string());
  CHECK(c.dataset == (dir / "data/manifest.csv").string());
  CHECK(c.out_dir == (dir / "run").string());
  CHECK(c.infer_patch == Extent3{16, 48, 48});
  CHECK(c.infer_stride == output_shape(c.network, {16, 48, 48}));
  CHECK(c.schedule.lr_initial == 1e-4);
  CHECK(c.schedule.momentum_final == 0.99);
  json bad = small_train_json("d", "o");
  bad["patch"] = {8, 48, 48};
  CHECK_THROWS_AS(parse_train_config(bad, "."), ConfigError);
  bad = small_train_json("d", "o");
  bad.erase("network");
  CHECK_THROWS_AS(parse_train_config(bad, "."), ConfigError);
  bad = small_train_json("d", "o");
  bad["epochs"] = -1;
  CHECK_THROWS_AS(parse_train_config(bad, "."), ConfigError);
}

TEST_CASE("training runs, logs every epoch, and repeats exactly") {
  const auto dir = oracle::temp_dir("train_run");
  PhantomSpec spec;
  spec.size = {20, 56, 56};
  spec.margin = {4, 12, 12};
  spec.seed = 11;
  const Dataset ds = generate_dataset(spec, 4, (dir / "data").string(), {2, 1, 1});
  const auto train_set = load_split(ds, "train");
  const auto val_set = load_split(ds, "val");
  CHECK(train_set.size() == 2);

  auto run = [&](const std::string& out) {
    const TrainConfig cfg = parse_train_config(small_train_json("", out), dir.string());
    std::vector<long> seen;
    const TrainResult r = train(cfg, Network<float>::build(cfg.network, cfg.seed), train_set, val_set,
                                [&](const EpochLog& e) { seen.push_back(e.epoch); });
    CHECK(seen == std::vector<long>{1, 2});
    CHECK(r.log.size() == 2);
    CHECK(r.best_epoch >= 1);
    for (const EpochLog& e : r.log) {
      CHECK(std::isfinite(e.train_loss));
      CHECK(std::isfinite(e.val_loss));
      CHECK(e.steps + e.skipped == 2);
      CHECK(e.lr == 1e-4);
      CHECK(e.aux_weight == doctest::Approx(1.0 - e.epoch / 50.0));
    }
    return r;
  };
  run("a");
  run("b");
  for (const char* f : {"best.ckpt", "last.ckpt", "train_log.csv"}) {
    CHECK(std::filesystem::exists(dir / "a" / f));
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  std::ifstream log(dir / "a" / "train_log.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "epoch,lr,momentum,pos_weight,aux_weight,train_loss,val_loss,val_dice");
}
