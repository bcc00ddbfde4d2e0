// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "calcseg/autodiff.hpp"
#include "calcseg/volume_io.hpp"

namespace calcseg {

/// Voxels supervised by the loss: intensity strictly above the threshold.
std::vector<std::uint8_t> intensity_mask(std::span<const float> hu, float threshold = kCalcificationHu);

template <typename T>
struct MaskedLoss {
  Var<T> loss;  // scalar
  bool empty_mask = false;
  std::size_t supervised = 0;  // mask-true voxel count
};

/// Sum over mask-true voxels of w(y) * BCE(sigmoid(z), y) with w(1) =
/// pos_weight and w(0) = 1, computed from logits in the stable form
/// max(z,0) - y z + log(1 + exp(-|z|)). Voxels outside the mask contribute
/// nothing, including to the summation order.
template <typename T>
MaskedLoss<T> masked_weighted_bce(const Var<T>& logit, const Tensor<T>& labels, std::span<const std::uint8_t> mask,
                                  T pos_weight);

/// main + sum_i weights[i] * aux[i]. Exactly six auxiliary terms.
template <typename T>
Var<T> total_loss(const Var<T>& main, std::span<const Var<T>> aux, std::span<const T> weights);

enum class ScheduleKind { lr, momentum, pos_weight, aux };

/// Epoch-indexed hyperparameters. A value changing "after epoch N" first
/// applies at epoch N + 1.
struct ScheduleSet {
  double lr_initial = 0.1;
  double lr_final = 0.01;
  long lr_last_initial_epoch = 10;
  double momentum_initial = 0.9;
  double momentum_final = 0.99;
  long momentum_last_initial_epoch = 10;
  double pos_weight_initial = 1000.0;
  double pos_weight_final = 1.0;
  long pos_weight_last_initial_epoch = 5;
  double aux_decay_epochs = 50.0;  // aux weight is max(0, 1 - epoch / aux_decay_epochs)
};

double schedule_value(const ScheduleSet& s, ScheduleKind which, long epoch);

ScheduleSet parse_schedule(const nlohmann::json& j);
nlohmann::json to_json(const ScheduleSet& s);

}  // namespace calcseg
