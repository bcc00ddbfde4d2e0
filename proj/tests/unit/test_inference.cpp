// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "calcseg/error.hpp"
#include "calcseg/inference.hpp"
#include "unit/oracles.hpp"

using namespace calcseg;

namespace {

struct Fixture {
  Network<float> net;
  Volume vol;
};

Fixture fixture() {
  Fixture f{Network<float>::build(load_network_config(oracle::source_path("configs/benchmark_net.json")), 3),
            Volume({20, 60, 58}, kDefaultSpacing)};
  std::mt19937_64 g(2);
  std::uniform_real_distribution<float> u(-100.0f, 600.0f);
  for (auto& v : f.vol.data) v = u(g);
  Rng rng = derive_stream(0, 0);
  f.net.forward(oracle::random_tensor<float>({1, 20, 40, 40}, g, -100.0, 600.0), layers::Mode::train, rng);
  return f;
}

// Probability map of one forward pass over the whole volume, placed on the volume grid.
Volume whole_volume_oracle(Network<float>& net, const Volume& vol, Extent3& lo, Extent3& hi) {
  Tensor<float> x(Shape{1, vol.dims[0], vol.dims[1], vol.dims[2]}, vol.data);
  Rng rng(0);
  const auto r = net.forward(x, layers::Mode::eval, rng);
  const Tensor<float> p = r.probability();
  Volume out(vol.dims, vol.spacing, 0.0f);
  const Extent3 L = r.geometry.label_offset;
  for (int a = 0; a < 3; ++a) {
    lo[a] = L[a];
    hi[a] = L[a] + r.geometry.out[a];
  }
  for (std::size_t d = 0; d < r.geometry.out[0]; ++d)
    for (std::size_t h = 0; h < r.geometry.out[1]; ++h)
      for (std::size_t w = 0; w < r.geometry.out[2]; ++w) out.at(L[0] + d, L[1] + h, L[2] + w) = p.at(0, d, h, w);
  return out;
}

}  // namespace

TEST_CASE("tile corners") {
  CHECK(tile_corners(10, 4, 3) == std::vector<std::size_t>{0, 3, 6});
  CHECK(tile_corners(10, 4, 4) == std::vector<std::size_t>{0, 4, 6});
  CHECK(tile_corners(4, 4, 1) == std::vector<std::size_t>{0});
  CHECK(tile_corners(11, 4, 100) == std::vector<std::size_t>{0, 7});
  CHECK_THROWS_AS(tile_corners(3, 4, 1), ShapeError);
  CHECK_THROWS_AS(tile_corners(8, 4, 0), ContractError);
  CHECK(tile_corners(11, 4, 2, 2) == std::vector<std::size_t>{0, 2, 4, 6});
  CHECK(tile_corners(12, 4, 4, 2) == std::vector<std::size_t>{0, 4, 8});
  CHECK_THROWS_AS(tile_corners(12, 4, 3, 2), ContractError);
}

TEST_CASE("tiled prediction matches a single whole-volume pass") {
  Fixture f = fixture();
  Extent3 lo{}, hi{};
  const Volume want = whole_volume_oracle(f.net, f.vol, lo, hi);
  const Extent3 patch{16, 44, 40};
  const Extent3 out = output_shape(f.net.config(), patch);
  for (const Extent3& stride : {default_tile_stride(f.net.config(), patch), Extent3{2, 4, 2}}) {
    const Prediction p = tile_predict(f.net, f.vol, patch, stride);
    CHECK(p.covered_lo == lo);
    CHECK(p.covered_hi == hi);
    double worst = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, double(std::abs(p.probability.data[i] - want.data[i])));
    CHECK(worst < 1e-5);
  }
  const Prediction single = tile_predict(f.net, f.vol, f.vol.dims, default_tile_stride(f.net.config(), f.vol.dims));
  CHECK(single.tiles == 1);
  CHECK(single.probability.data == want.data);
}

TEST_CASE("tile_predict validates stride and size") {
  Fixture f = fixture();
  const Extent3 patch{16, 44, 40};
  CHECK_THROWS_AS(tile_predict(f.net, f.vol, patch, {0, 2, 2}), ContractError);
  CHECK_THROWS_AS(tile_predict(f.net, f.vol, patch, {100, 2, 2}), ContractError);
  CHECK_THROWS_AS(tile_predict(f.net, f.vol, patch, {2, 3, 2}), ContractError);
  CHECK_THROWS_AS(tile_predict(f.net, f.vol, {16, 44, 80}, {2, 2, 2}), ShapeError);
  // An odd margin leaves the last voxel row uncovered rather than shifting phase.
  const Volume odd({20, 60, 59}, kDefaultSpacing, 100.0f);
  const Extent3 patch2{16, 44, 40};
  const Prediction p = tile_predict(f.net, odd, patch2, {2, 2, 2});
  const Geometry g = plan(f.net.config(), patch2);
  CHECK(p.covered_hi[2] == 18 + g.label_offset[2] + g.out[2]);
}

TEST_CASE("segment needs both probability and intensity") {
  Volume prob({1, 1, 4}, kDefaultSpacing), hu({1, 1, 4}, kDefaultSpacing);
  prob.data = {0.5f, 0.9f, 0.49f, 1.0f};
  hu.data = {131.0f, 130.0f, 500.0f, 130.01f};
  CHECK(segment(prob, hu).data == std::vector<std::uint8_t>{1, 0, 0, 1});
  CHECK(segment(prob, hu, 0.95, 0.0).data == std::vector<std::uint8_t>{0, 0, 0, 1});
}

TEST_CASE("summaries are recomputable from per-image rows") {
  std::vector<ImageScore> rows;
  std::mt19937_64 g(4);
  std::uniform_int_distribution<std::size_t> u(1, 400);
  for (int i = 0; i < 9; ++i) {
    ImageScore s;
    s.id = "p" + std::to_string(i);
    s.overlap.size_a = u(g);
    s.overlap.size_b = u(g);
    s.overlap.intersection = std::min(s.overlap.size_a, s.overlap.size_b) / 2;
    s.dice = stats::dice(s.overlap);
    s.predicted_mm3 = s.overlap.size_a * 0.2;
    s.truth_mm3 = s.overlap.size_b * 0.2;
    rows.push_back(s);
  }
  const EvalReport r = summarize(rows);
  double inter = 0, denom = 0, m = 0;
  for (const auto& s : rows) {
    inter += s.overlap.intersection;
    denom += s.overlap.size_a + s.overlap.size_b;
    m += s.dice / 9.0;
  }
  CHECK(r.absolute_dice == doctest::Approx(2 * inter / denom).epsilon(1e-14));
  CHECK(r.mean_dice == doctest::Approx(m).epsilon(1e-14));
  CHECK(r.quarters_valid);
  CHECK(r.icc_valid);

  const auto dir = oracle::temp_dir("inference_csv");
  write_report_csv((dir / "r.csv").string(), r);
  std::ifstream in(dir / "r.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "id,intersection,predicted_voxels,truth_voxels,dice,predicted_mm3,truth_mm3");
  std::vector<ImageScore> back;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> c;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    REQUIRE(c.size() == 7);
    ImageScore s;
    s.id = c[0];
    s.overlap = {std::stoul(c[1]), std::stoul(c[2]), std::stoul(c[3])};
    s.dice = std::stod(c[4]);
    s.predicted_mm3 = std::stod(c[5]);
    s.truth_mm3 = std::stod(c[6]);
    back.push_back(s);
  }
  const EvalReport r2 = summarize(back);
  CHECK(report_json(r2) == report_json(r));
}

TEST_CASE("small evaluations leave quarters and ICC undefined") {
  ImageScore s;
  s.id = "only";
  s.overlap = {1, 2, 2};
  s.dice = 0.5;
  const EvalReport r = summarize({s, s, s});
  CHECK_FALSE(r.quarters_valid);
  CHECK_FALSE(r.icc_valid);  // zero variance
  CHECK(report_json(r)["quarter_dice"].is_null());
  CHECK(summarize({s}).sd_dice == 0.0);
}

TEST_CASE("score_image measures volumes with the truth spacing") {
  LabelVolume a({1, 2, 2}, {2.0, 1.0, 0.5}, 0), b({1, 2, 2}, {2.0, 1.0, 0.5}, 0);
  a.data = {1, 1, 0, 0};
  b.data = {1, 0, 1, 1};
  const ImageScore s = score_image("x", a, b);
  CHECK(s.dice == doctest::Approx(0.4));
  CHECK(s.predicted_mm3 == 2.0);
  CHECK(s.truth_mm3 == 3.0);
}
