// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "calcseg/network.hpp"
#include "calcseg/stats.hpp"
#include "calcseg/volume_io.hpp"

namespace calcseg {

/// Whole-volume probabilities. Voxels outside the covered region are 0.
struct Prediction {
  Volume probability;
  Extent3 covered_lo{};  // covered region [lo, hi) per axis
  Extent3 covered_hi{};
  std::size_t tiles = 0;
};

/// Tile corners along one axis: multiples of stride, then a last corner at the
/// largest multiple of period that keeps the tile inside the volume. stride
/// must be a multiple of period so every tile sees the same grid phase.
std::vector<std::size_t> tile_corners(std::size_t volume, std::size_t patch, std::size_t stride,
                                      std::size_t period = 1);

/// Eval-mode patchwise prediction, averaging probabilities where output
/// tiles overlap. stride must be between 1 and the patch's output extent and
/// a multiple of the network's grid period.
Prediction tile_predict(Network<float>& net, const Volume& vol, const Extent3& patch, const Extent3& stride);

/// (probability >= prob_thresh) AND (intensity > hu_thresh).
LabelVolume segment(const Volume& probability, const Volume& vol, double prob_thresh = 0.5,
                    double hu_thresh = kCalcificationHu);

/// One evaluated image.
struct ImageScore {
  std::string id;
  stats::Overlap overlap;
  double dice = 0.0;
  double predicted_mm3 = 0.0;
  double truth_mm3 = 0.0;
};

struct EvalReport {
  std::vector<ImageScore> images;
  double absolute_dice = 0.0;
  double mean_dice = 0.0;
  double sd_dice = 0.0;                  // 0 for a single image
  std::array<double, 4> quarter_dice{};  // valid when quarters_valid
  bool quarters_valid = false;
  double icc = 0.0;  // valid when icc_valid
  bool icc_valid = false;
};

ImageScore score_image(const std::string& id, const LabelVolume& predicted, const LabelVolume& truth);

/// Aggregates from per-image rows.
EvalReport summarize(std::vector<ImageScore> images);

/// Per-image CSV: id,intersection,predicted_voxels,truth_voxels,dice,predicted_mm3,truth_mm3
void write_report_csv(const std::string& path, const EvalReport& r);
nlohmann::json report_json(const EvalReport& r);

}  // namespace calcseg
