// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "calcseg/layers.hpp"
#include "calcseg/tensor.hpp"

namespace calcseg {

inline constexpr std::size_t kAuxHeads = 6;

enum class BlockKind { plain, residual };
enum class DropoutPosition { none, pre_conv1, pre_conv2, pre_add };

struct ConvSpec {
  std::size_t features = 0;
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
};

struct DropoutSpec {
  DropoutPosition position = DropoutPosition::none;
  double p = 0.0;
  layers::DropoutVariant variant = layers::DropoutVariant::element;
};

/// Two pre-activation convolutions, BN -> ReLU -> conv each, with an
/// optional dropout and, for residual blocks, a centre-cropped skip.
struct BlockSpec {
  BlockKind kind = BlockKind::residual;
  std::array<ConvSpec, 2> convs{};
  DropoutSpec dropout{};
};

enum class LayerType { conv, block, upsample, concat };

struct LayerSpec {
  std::string name;
  LayerType type = LayerType::conv;
  ConvSpec conv{};     // conv
  bool preact = true;  // conv: BN -> ReLU before the convolution
  BlockSpec block{};   // block
  Extent3 factor{1, 1, 1};        // upsample
  std::vector<std::string> from;  // concat operands, in order
};

/// Declarative layer graph. Layers form a chain; a concat layer instead reads
/// the named layers in `from`. Extents are (depth, height, width).
struct NetworkConfig {
  std::string name;
  std::size_t input_channels = 1;
  double input_offset = 0.0;  // network input = (HU - offset) / scale
  double input_scale = 1.0;
  bool head_batchnorm = true;  // BN between each head's 1x1 conv and its sigmoid
  std::vector<LayerSpec> layers;
  std::vector<std::string> aux_heads;  // layer names, exactly kAuxHeads
};

/// Parses and validates. Throws ConfigError naming the offending field.
NetworkConfig parse_network_config(const nlohmann::json& j);
NetworkConfig load_network_config(const std::string& path);
nlohmann::json to_json(const NetworkConfig& cfg);

/// Size-independent properties of one layer's output.
struct LayerInfo {
  std::size_t features = 0;
  Extent3 jump{1, 1, 1};           // input voxels per output voxel
  Extent3 rf{1, 1, 1};             // receptive field
};

struct Analysis {
  std::vector<LayerInfo> layers;  // parallel to cfg.layers
  Extent3 rf{1, 1, 1};
  Extent3 period{1, 1, 1};          // least common multiple of all layer jumps
  std::size_t weighted_layers = 0;  // convolutions in the main path, heads excluded
  std::size_t parameters = 0;       // trainable scalars including heads and BN affine terms
};

/// Validates the graph and computes features, jumps, and receptive fields.
/// Throws ConfigError on structural problems.
Analysis analyze(const NetworkConfig& cfg);

/// Per-axis receptive field, (depth, height, width).
Extent3 receptive_field(const NetworkConfig& cfg);

/// Shifts of the input by multiples of the period shift the output by the
/// same amount; other shifts change the coarse-grid phase.
Extent3 grid_period(const NetworkConfig& cfg);

/// Largest tile stride that keeps tiles gapless and on the grid period.
Extent3 default_tile_stride(const NetworkConfig& cfg, const Extent3& patch);

/// Extents and alignment for one input size.
struct Geometry {
  Extent3 in{};
  Extent3 out{};
  std::vector<Extent3> sizes;  // output extent of each layer
  // Twice the input coordinate of the centre of each layer's output voxel 0.
  std::vector<std::array<long, 3>> center2;
  std::vector<std::array<Extent3, 2>> concat_crop;  // centre-crop target per concat operand (zeros otherwise)
  std::array<Extent3, kAuxHeads> aux_offset{};      // window of each upsampled aux map on the final grid
  Extent3 label_offset{};  // input voxel aligned with output voxel 0 (floor of its centre)
};

/// Throws ShapeError if the input is too small or a junction cannot be
/// cropped symmetrically for this size.
Geometry plan(const NetworkConfig& cfg, const Extent3& in);

Extent3 output_shape(const NetworkConfig& cfg, const Extent3& in);

/// FNV-1a 64 of the canonical JSON serialization.
std::uint64_t config_hash(const NetworkConfig& cfg);

}  // namespace calcseg
