// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "calcseg/phantom.hpp"

namespace calcseg {

/// One manifest row. Paths are volume stems relative to the manifest's directory.
struct DatasetEntry {
  std::string id;
  std::string volume;
  std::string label;
  std::string split;  // train, val, or test
};

struct Dataset {
  std::string root;  // directory holding the manifest
  std::vector<DatasetEntry> entries;

  std::vector<DatasetEntry> split(const std::string& name) const;
  std::string resolve(const std::string& relative) const;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// Two thirds train, one sixth validation, the rest test (60 -> 40/10/10).
SplitCounts default_split(std::size_t count);

inline constexpr const char* kManifestName = "manifest.csv";

/// CSV with header `id,volume,label,split`.
void write_manifest(const std::string& path, const std::vector<DatasetEntry>& entries);
/// Accepts the manifest file or its directory. Throws FormatError on bad rows.
Dataset read_manifest(const std::string& path);

/// Writes `count` phantoms plus the manifest into out_dir. Phantom i uses
/// stream (spec.seed, i) and lands in split order train, val, test.
Dataset generate_dataset(const PhantomSpec& spec, std::size_t count, const std::string& out_dir, SplitCounts split);

}  // namespace calcseg
