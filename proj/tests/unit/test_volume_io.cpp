// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>

#include "calcseg/error.hpp"
#include "calcseg/volume_io.hpp"
#include "unit/oracles.hpp"

using namespace calcseg;

TEST_CASE("volumes round trip through sidecar and raw buffer") {
  const auto dir = oracle::temp_dir("volume_io");
  Volume v({2, 3, 4}, {1.5, 0.5, 0.25});
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<float>(i) * 3.5f - 20.0f;
  const std::string stem = (dir / "img").string();
  save_volume(stem, v);
  const Volume back = load_volume(stem);
  CHECK(back.dims == v.dims);
  CHECK(back.spacing == v.spacing);
  CHECK(back.data == v.data);
  CHECK(load_volume(stem + ".json").data == v.data);
  CHECK(std::filesystem::file_size(stem + ".raw") == v.size() * sizeof(float));

  LabelVolume l({2, 3, 4}, kDefaultSpacing, 0);
  l.data[5] = 1;
  save_volume((dir / "lab").string(), l);
  CHECK(load_label_volume((dir / "lab").string()).data == l.data);
  const Volume as_float = load_any_as_float((dir / "lab").string());
  CHECK(as_float.data[5] == 1.0f);
  CHECK(as_float.data[4] == 0.0f);
  CHECK_THROWS_AS(load_volume((dir / "lab").string()), FormatError);
}

TEST_CASE("malformed volumes raise format errors") {
  const auto dir = oracle::temp_dir("volume_io_bad");
  Volume v({2, 2, 2}, kDefaultSpacing, 1.0f);
  const std::string stem = (dir / "img").string();
  save_volume(stem, v);
  SUBCASE("truncated buffer") {
    std::filesystem::resize_file(stem + ".raw", 12);
    CHECK_THROWS_AS(load_volume(stem), FormatError);
  }
  SUBCASE("header is not JSON") {
    std::ofstream(stem + ".json") << "dims: 2";
    CHECK_THROWS_AS(load_volume(stem), FormatError);
  }
  SUBCASE("unknown dtype") {
    std::ofstream(stem + ".json") << R"({"dims":[2,2,2],"spacing":[1,1,1],"dtype":"int16","data":"img.raw"})";
    CHECK_THROWS_AS(load_volume(stem), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_volume((dir / "nope").string()), IoError); }
}

TEST_CASE("sidecar path") {
  CHECK(sidecar_path("a/b") == "a/b.json");
  CHECK(sidecar_path("a/b.json") == "a/b.json");
}
