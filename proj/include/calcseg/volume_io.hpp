// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "calcseg/tensor.hpp"

namespace calcseg {

/// Clinical calcification threshold in HU.
inline constexpr float kCalcificationHu = 130.0f;

/// Millimetres per voxel along (depth, height, width).
using Spacing = std::array<double, 3>;

inline constexpr Spacing kDefaultSpacing{1.0, 0.46, 0.46};

/// Names of the (depth, height, width) axes. Flips for augmentation mirror
/// the frontal (left-right) axis, which is the width axis.
inline constexpr std::array<const char*, 3> kAxisLabels{"longitudinal", "sagittal", "frontal"};
inline constexpr int kFrontalAxis = 2;

/// A dense grid stored depth-major, then height, then width.
template <typename V>
struct Grid {
  Extent3 dims{};
  Spacing spacing = kDefaultSpacing;
  std::vector<V> data;

  Grid() = default;
  Grid(Extent3 d, Spacing s, V fill = V{}) : dims(d), spacing(s), data(d[0] * d[1] * d[2], fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const { return (d * dims[1] + h) * dims[2] + w; }
  V& at(std::size_t d, std::size_t h, std::size_t w) { return data[index(d, h, w)]; }
  const V& at(std::size_t d, std::size_t h, std::size_t w) const { return data[index(d, h, w)]; }
};

/// Intensities in HU.
using Volume = Grid<float>;
/// Binary lesion mask (0 or 1).
using LabelVolume = Grid<std::uint8_t>;

/// Writes `<stem>.json` (dims, spacing, dtype, axis order, element count,
/// data file name) and `<stem>.raw` (little-endian row-major buffer).
void save_volume(const std::string& stem, const Volume& v);
void save_volume(const std::string& stem, const LabelVolume& v);

/// Reads the sidecar at `<stem>.json` (a path ending in .json is also
/// accepted). Throws FormatError on a malformed header, unknown dtype, or a
/// raw buffer whose length disagrees with the header.
Volume load_volume(const std::string& path);
LabelVolume load_label_volume(const std::string& path);

/// Loads either dtype; uint8 grids are converted to 0/1 floats.
Volume load_any_as_float(const std::string& path);

/// Sidecar path for a stem or sidecar path.
std::string sidecar_path(const std::string& path);

}  // namespace calcseg
