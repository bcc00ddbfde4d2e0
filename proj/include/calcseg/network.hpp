// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "calcseg/autodiff.hpp"
#include "calcseg/layers.hpp"
#include "calcseg/network_config.hpp"
#include "calcseg/random.hpp"

namespace calcseg {

/// Bound parameters of one block. Vars may be tracked or constant.
template <typename T>
struct BlockParams {
  Var<T> bn1_gamma, bn1_beta, w1;
  Var<T> bn2_gamma, bn2_beta, w2, b2;
  layers::BNState<T>* bn1 = nullptr;
  layers::BNState<T>* bn2 = nullptr;
};

/// BN -> ReLU -> conv1 -> BN -> ReLU -> conv2 (+ centre-cropped input for
/// residual blocks). When forced_keep is given, the block's dropout uses that
/// keep mask instead of drawing one, in either mode.
template <typename T>
Var<T> apply_block(const BlockSpec& spec, const BlockParams<T>& p, const Var<T>& x, layers::Mode mode, Rng& rng,
                   const std::vector<std::uint8_t>* forced_keep = nullptr);

template <typename T>
struct ForwardResult {
  Var<T> logit;                              // final head, on the output grid
  std::array<Var<T>, kAuxHeads> aux_logit;   // auxiliary heads, upsampled and cropped to the output grid
  std::vector<Var<T>> params;                // parallel to Network::parameters()
  Geometry geometry;

  Tensor<T> probability() const;
  Tensor<T> aux_probability(std::size_t i) const;
};

template <typename T>
class Network {
 public:
  struct Parameter {
    std::string name;
    Tensor<T> value;
  };
  struct BatchNorm {
    std::string name;
    layers::BNState<T> state;
  };

  /// He fan-in normal weights, zero biases, gamma 1, beta 0, running stats (0, 1).
  static Network build(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<BatchNorm>& batchnorms() { return bns_; }
  const std::vector<BatchNorm>& batchnorms() const { return bns_; }
  std::size_t parameter_count() const;

  /// input: (channels, depth, height, width) in HU. The network normalizes
  /// it with the config's offset and scale. With a tape, parameters become
  /// tracked leaves and the returned params can be differentiated.
  ForwardResult<T> forward(const Tensor<T>& input, layers::Mode mode, Rng& rng, Tape<T>* tape = nullptr);

  /// Forward with caller-supplied input and parameter Vars, parallel to
  /// parameters(). Lets a check differentiate through any subset of them.
  ForwardResult<T> forward_bound(const Var<T>& input, std::vector<Var<T>> params, layers::Mode mode, Rng& rng);

  /// Copy with every tensor converted to another precision.
  template <typename U>
  Network<U> cast() const;

 private:
  template <typename>
  friend class Network;

  struct ConvSlot {
    int bn = -1;  // index into bns_
    int gamma = -1, beta = -1, weight = -1, bias = -1;
  };
  struct LayerSlots {
    ConvSlot first;
    ConvSlot second;  // blocks only
  };
  struct HeadSlots {
    ConvSlot conv;
    int post_bn = -1, post_gamma = -1, post_beta = -1;
  };

  int add_param(const std::string& name, Shape shape);
  int add_bn(const std::string& name, std::size_t features);
  ConvSlot add_conv(const std::string& prefix, std::size_t in, const ConvSpec& c, bool preact, bool bias,
                    const std::string& bn_name);
  HeadSlots add_head(const std::string& prefix, std::size_t in);
  const Geometry& geometry_for(const Extent3& in);

  NetworkConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<Parameter> params_;
  std::vector<BatchNorm> bns_;
  std::vector<LayerSlots> slots_;
  HeadSlots main_head_;
  std::array<HeadSlots, kAuxHeads> aux_heads_;
  std::array<Extent3, kAuxHeads> aux_jump_{};
  std::map<Extent3, Geometry> geometry_cache_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace calcseg
