// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include <json.hpp>

#include "calcseg/volume_io.hpp"

namespace calcseg {

using Range = std::array<double, 2>;  // inclusive [lo, hi]
using CountRange = std::array<std::size_t, 2>;

/// Parameters of the synthetic CT-like generator. Lengths are in voxels
/// along (depth, height, width) unless noted.
struct PhantomSpec {
  Extent3 size{48, 96, 96};
  Spacing spacing = kDefaultSpacing;

  CountRange tubes{1, 2};          // cylindrical bone segments
  Range tube_radius_mm{1.8, 3.0};  // cross-section radius
  CountRange plates{1, 1};         // bone slabs
  Range plate_thickness_mm{1.5, 2.5};

  CountRange lesions{1, 4};
  Range lesion_radius_mm{0.8, 1.8};   // ellipsoid semi-axes, drawn per axis
  double bone_adjacent_fraction = 0.5;  // Bernoulli probability per lesion

  Range lesion_hu{140.0, 800.0};
  Range bone_hu{400.0, 1200.0};
  Range background_hu{20.0, 80.0};
  CountRange distractors{0, 3};       // sub-threshold blobs
  Range distractor_hu{90.0, 125.0};
  double noise_sd = 12.0;

  Extent3 margin{8, 16, 16};  // lesion-free border, at least half the receptive field
  std::uint64_t seed = 0;
  std::size_t max_retries = 400;
};

/// Throws ConfigError naming the invalid field.
void validate(const PhantomSpec& spec);

PhantomSpec parse_phantom_spec(const nlohmann::json& j);
nlohmann::json to_json(const PhantomSpec& spec);

struct Phantom {
  Volume volume;
  LabelVolume label;
  std::size_t lesions = 0;
  std::size_t bone_adjacent = 0;  // lesions sharing a face with bone
};

/// Phantom `index` of a dataset; its random stream derives from (spec.seed, index).
/// Throws GenerationError if lesions cannot be placed within max_retries.
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t index = 0);

/// Number of 6-connected components of a binary grid.
std::size_t count_components(const LabelVolume& label);

}  // namespace calcseg
