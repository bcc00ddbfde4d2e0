// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/inference.hpp"

#include <cstdio>
#include <fstream>

#include "calcseg/error.hpp"

namespace calcseg {

std::vector<std::size_t> tile_corners(std::size_t volume, std::size_t patch, std::size_t stride, std::size_t period) {
  if (patch > volume) throw ShapeError("patch extent " + std::to_string(patch) + " exceeds volume extent " + std::to_string(volume));
  if (period == 0 || stride == 0 || stride % period != 0) {
    throw ContractError("tile stride " + std::to_string(stride) + " must be a positive multiple of the grid period " +
                        std::to_string(period));
  }
  const std::size_t last = (volume - patch) / period * period;
  std::vector<std::size_t> c;
  for (std::size_t x = 0; x < last; x += stride) c.push_back(x);
  c.push_back(last);
  return c;
}

Prediction tile_predict(Network<float>& net, const Volume& vol, const Extent3& patch, const Extent3& stride) {
  const Geometry g = plan(net.config(), patch);
  for (int a = 0; a < 3; ++a) {
    if (patch[a] > vol.dims[a]) {
      throw ShapeError("volume " + extent_to_string(vol.dims) + " is smaller than patch " + extent_to_string(patch));
    }
    if (stride[a] < 1 || stride[a] > g.out[a]) {
      throw ContractError("tile stride " + extent_to_string(stride) + " must lie in [1, " + extent_to_string(g.out) +
                          "] so tiles cover the volume");
    }
  }
  const Extent3 period = grid_period(net.config());
  const auto cd = tile_corners(vol.dims[0], patch[0], stride[0], period[0]);
  const auto ch = tile_corners(vol.dims[1], patch[1], stride[1], period[1]);
  const auto cw = tile_corners(vol.dims[2], patch[2], stride[2], period[2]);

  Prediction pred;
  pred.probability = Volume(vol.dims, vol.spacing, 0.0f);
  std::vector<double> sum(vol.size(), 0.0);
  std::vector<std::uint32_t> count(vol.size(), 0);
  Rng unused(0);  // eval mode draws nothing
  Tensor<float> input(Shape{1, patch[0], patch[1], patch[2]});
  for (std::size_t d0 : cd) {
    for (std::size_t h0 : ch) {
      for (std::size_t w0 : cw) {
        for (std::size_t d = 0; d < patch[0]; ++d) {
          for (std::size_t h = 0; h < patch[1]; ++h) {
            const float* src = &vol.at(d0 + d, h0 + h, w0);
            std::copy(src, src + patch[2], &input.at(0, d, h, 0));
          }
        }
        const ForwardResult<float> r = net.forward(input, layers::Mode::eval, unused);
        const Tensor<float> p = r.probability();
        for (std::size_t d = 0; d < g.out[0]; ++d) {
          for (std::size_t h = 0; h < g.out[1]; ++h) {
            const std::size_t base = vol.index(d0 + g.label_offset[0] + d, h0 + g.label_offset[1] + h, w0 + g.label_offset[2]);
            const float* src = &p.at(0, d, h, 0);
            for (std::size_t w = 0; w < g.out[2]; ++w) {
              sum[base + w] += src[w];
              ++count[base + w];
            }
          }
        }
        ++pred.tiles;
      }
    }
  }
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (count[i]) pred.probability.data[i] = static_cast<float>(sum[i] / count[i]);
  }
  for (int a = 0; a < 3; ++a) {
    pred.covered_lo[a] = g.label_offset[a];
    const std::size_t last = (a == 0 ? cd : a == 1 ? ch : cw).back();
    pred.covered_hi[a] = last + g.label_offset[a] + g.out[a];
  }
  return pred;
}

LabelVolume segment(const Volume& probability, const Volume& vol, double prob_thresh, double hu_thresh) {
  if (probability.dims != vol.dims) {
    throw ContractError("segment: probability grid " + extent_to_string(probability.dims) + " and volume " +
                        extent_to_string(vol.dims) + " are not aligned");
  }
  LabelVolume out(vol.dims, vol.spacing, 0);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    out.data[i] = probability.data[i] >= prob_thresh && vol.data[i] > hu_thresh ? 1 : 0;
  }
  return out;
}

ImageScore score_image(const std::string& id, const LabelVolume& predicted, const LabelVolume& truth) {
  if (predicted.dims != truth.dims) {
    throw ContractError("image " + id + ": prediction " + extent_to_string(predicted.dims) + " and label " +
                        extent_to_string(truth.dims) + " differ in size");
  }
  ImageScore s;
  s.id = id;
  s.overlap = stats::overlap(predicted.data, truth.data);
  s.dice = stats::dice(s.overlap);
  s.predicted_mm3 = stats::volume_mm3(predicted.data, truth.spacing);
  s.truth_mm3 = stats::volume_mm3(truth.data, truth.spacing);
  return s;
}

EvalReport summarize(std::vector<ImageScore> images) {
  EvalReport r;
  r.images = std::move(images);
  if (r.images.empty()) return r;
  std::vector<stats::Overlap> ov;
  std::vector<double> dice, pv, tv;
  std::vector<std::string> ids;
  for (const auto& s : r.images) {
    ov.push_back(s.overlap);
    dice.push_back(s.dice);
    pv.push_back(s.predicted_mm3);
    tv.push_back(s.truth_mm3);
    ids.push_back(s.id);
  }
  r.absolute_dice = stats::absolute_dice(ov);
  r.mean_dice = stats::mean(dice);
  r.sd_dice = dice.size() > 1 ? stats::sd(dice) : 0.0;
  if (r.images.size() >= 4) {
    r.quarter_dice = stats::quarter_dice(dice, tv, ids);
    r.quarters_valid = true;
  }
  if (r.images.size() >= 3) {
    try {
      r.icc = stats::icc(pv, tv);
      r.icc_valid = true;
    } catch (const NumericError&) {
      r.icc_valid = false;
    }
  }
  return r;
}

void write_report_csv(const std::string& path, const EvalReport& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "id,intersection,predicted_voxels,truth_voxels,dice,predicted_mm3,truth_mm3\n";
  char line[256];
  for (const auto& s : r.images) {
    std::snprintf(line, sizeof line, "%zu,%zu,%zu,%.17g,%.17g,%.17g\n", s.overlap.intersection, s.overlap.size_a,
                  s.overlap.size_b, s.dice, s.predicted_mm3, s.truth_mm3);
    out << s.id << ',' << line;
  }
  if (!out) throw IoError("write failed for " + path);
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j{{"images", r.images.size()},
                   {"absolute_dice", r.absolute_dice},
                   {"mean_dice", r.mean_dice},
                   {"sd_dice", r.sd_dice}};
  j["quarter_dice"] = r.quarters_valid ? nlohmann::json(r.quarter_dice) : nlohmann::json(nullptr);
  j["icc"] = r.icc_valid ? nlohmann::json(r.icc) : nlohmann::json(nullptr);
  return j;
}

}  // namespace calcseg
