// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "calcseg/dataset.hpp"
#include "calcseg/network.hpp"
#include "calcseg/objective.hpp"
#include "calcseg/volume_io.hpp"

namespace calcseg {

struct TrainConfig {
  NetworkConfig network;
  std::string dataset;  // manifest path
  std::string out_dir;  // checkpoints and log; empty writes nothing
  Extent3 patch{98, 178, 178};
  Extent3 infer_patch{98, 178, 178};
  Extent3 infer_stride{63, 97, 97};
  long epochs = 50;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool flip = true;
  bool deep_supervision = true;
  bool masked = true;  // supervise only voxels above 130 HU
  double prob_thresh = 0.5;
  ScheduleSet schedule;
};

/// Relative paths in the document resolve against base_dir.
TrainConfig parse_train_config(const nlohmann::json& j, const std::string& base_dir);
TrainConfig load_train_config(const std::string& path);
nlohmann::json to_json(const TrainConfig& c);

/// Heavy-ball momentum state, one buffer per parameter.
struct OptimizerState {
  std::vector<Tensor<float>> velocity;
};

OptimizerState make_optimizer(const Network<float>& net);

/// v <- mu v - lr g; p <- p + v. Throws NumericError naming the first
/// parameter with a non-finite gradient before touching anything.
void sgd_momentum_step(std::vector<Network<float>::Parameter>& params, const std::vector<const Tensor<float>*>& grads,
                       OptimizerState& state, double lr, double mu);

/// A training patch: image (HU) and labels over the same extent.
struct Patch {
  Volume image;
  LabelVolume label;
  Extent3 corner{};
  bool flipped = false;
};

/// Uniformly random corner. Throws ContractError if size exceeds the volume.
Patch sample_patch(const Volume& vol, const LabelVolume& labels, const Extent3& size, Rng& rng);

/// Mirrors image and label along the frontal axis. Always flips.
void flip_frontal(Patch& p);

/// With probability 0.5, flip_frontal. Returns whether it flipped.
bool augment_flip(Patch& p, Rng& rng);

struct EpochLog {
  long epoch = 0;
  double lr = 0.0;
  double momentum = 0.0;
  double pos_weight = 0.0;
  double aux_weight = 0.0;
  double train_loss = 0.0;  // mean over steps taken
  double val_loss = 0.0;
  double val_dice = 0.0;  // mean per-image Dice
  std::size_t steps = 0;
  std::size_t skipped = 0;
};

struct TrainResult {
  Network<float> best;
  Network<float> last;
  long best_epoch = 0;  // 0 when no epoch ran
  std::vector<EpochLog> log;
  std::size_t skipped = 0;
};

struct LoadedVolume {
  std::string id;
  Volume image;
  LabelVolume label;
};

std::vector<LoadedVolume> load_split(const Dataset& ds, const std::string& split);

/// Masked BCE of averaged probabilities over the covered region, summed per
/// volume and averaged over volumes, together with mean Dice after
/// thresholding.
struct Validation {
  double loss = 0.0;
  double dice = 0.0;
};
Validation validate(Network<float>& net, const std::vector<LoadedVolume>& vols, const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains net in place. Writes best.ckpt, last.ckpt and train_log.csv under
/// cfg.out_dir when it is set.
TrainResult train(const TrainConfig& cfg, Network<float> net, const std::vector<LoadedVolume>& train_set,
                  const std::vector<LoadedVolume>& val_set, const EpochCallback& on_epoch = {});

void write_train_log(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace calcseg
