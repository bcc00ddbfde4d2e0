// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "calcseg/dataset.hpp"
#include "cli.hpp"
#include "unit/oracles.hpp"

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = calcseg::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("rf prints the receptive field first") {
  const Run r = cli({"rf", "--config", oracle::source_path("configs/reference.json")});
  CHECK(r.code == 0);
  CHECK(r.out.substr(0, r.out.find('\n')) == "85 85 37");
}

TEST_CASE("exit codes") {
  CHECK(cli({}).code == calcseg::kExitInvalid);
  CHECK(cli({"bogus"}).code == calcseg::kExitInvalid);
  CHECK(cli({"rf"}).code == calcseg::kExitInvalid);
  CHECK(cli({"rf", "--config", "/nonexistent/net.json"}).code == calcseg::kExitIo);
  const auto dir = oracle::temp_dir("cli_codes");
  std::ofstream(dir / "bad.json") << R"({"layers": []})";
  CHECK(cli({"rf", "--config", (dir / "bad.json").string()}).code == calcseg::kExitInvalid);
  CHECK(cli({"--isa", "sse", "rf", "--config", oracle::source_path("configs/reference.json")}).code ==
        calcseg::kExitInvalid);
}

TEST_CASE("generate honours count and split") {
  const auto dir = oracle::temp_dir("cli_generate");
  std::ofstream(dir / "spec.json") << R"({"size": [16, 48, 48], "margin": [3, 10, 10], "seed": 4})";
  const Run none = cli({"generate", "--spec", (dir / "spec.json").string(), "--count", "0", "--out",
                        (dir / "zero").string(), "--split", "0", "0", "0"});
  CHECK(none.code == 0);
  CHECK(calcseg::read_manifest((dir / "zero").string()).entries.empty());
  const Run one = cli({"generate", "--spec", (dir / "spec.json").string(), "--count", "1", "--out",
                       (dir / "one").string()});
  CHECK(one.code == 0);
  const auto ds = calcseg::read_manifest((dir / "one").string());
  REQUIRE(ds.entries.size() == 1);
  CHECK(std::filesystem::exists(dir / "one" / "run_manifest.json"));
  const Run bad = cli({"generate", "--spec", (dir / "spec.json").string(), "--count", "3", "--out",
                       (dir / "bad").string(), "--split", "1", "1", "2"});
  CHECK(bad.code == calcseg::kExitInvalid);
}

TEST_CASE("gradcheck subcommand passes") {
  const Run r = cli({"gradcheck"});
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
}
