// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "calcseg/autodiff.hpp"
#include "calcseg/network_config.hpp"

namespace calcseg {

struct GradCheck {
  std::string name;
  FdReport report;
};

/// Small network used by the full-loss check: same layer types as the
/// shipped configs, tiny extents.
NetworkConfig gradcheck_network();

/// Central-difference checks in double precision for every layer, the block
/// variants, the masked loss, and the masked deeply supervised loss of
/// gradcheck_network() with respect to its input and every parameter tensor.
std::vector<GradCheck> run_gradcheck_suite(std::uint64_t seed = 1);

/// At least one coordinate checked and max relative error below tol.
bool gradcheck_passed(const GradCheck& c, double tol = 1e-5);

}  // namespace calcseg
