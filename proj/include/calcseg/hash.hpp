// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace calcseg {

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = kFnvOffset);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = kFnvOffset);

/// Hash of a file's bytes. Throws IoError if it cannot be read.
std::uint64_t fnv1a64_file(const std::string& path);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

}  // namespace calcseg
