// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "calcseg/network.hpp"

namespace calcseg {

/// Binary layout, all integers little-endian:
///   "CALCSEG1" magic, u32 version, u64 config hash, i64 epoch, u64 seed,
///   u32 length + rng state text, u32 length + canonical config JSON,
///   u32 tensor count, then per tensor: u16 name length + name, u8 rank,
///   u64 extents, float32 data (parameters in declaration order, then BN
///   running mean and variance), and finally u32 BN count with one u64
///   update counter each.
struct Checkpoint {
  Network<float> network;
  std::int64_t epoch = 0;
  std::string rng_state;  // text form of the training generator
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::string& path, const Network<float>& net, std::int64_t epoch,
                     const std::string& rng_state);

/// Throws IoError if unreadable and FormatError on any inconsistency,
/// including a config hash that does not match the embedded config.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace calcseg
