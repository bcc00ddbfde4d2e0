// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "calcseg/error.hpp"

namespace calcseg {

namespace fs = std::filesystem;

std::vector<DatasetEntry> Dataset::split(const std::string& name) const {
  std::vector<DatasetEntry> out;
  for (const auto& e : entries) {
    if (e.split == name) out.push_back(e);
  }
  return out;
}

std::string Dataset::resolve(const std::string& relative) const { return (fs::path(root) / relative).string(); }

SplitCounts default_split(std::size_t count) {
  SplitCounts s;
  s.train = count * 2 / 3;
  s.val = count / 6;
  s.test = count - s.train - s.val;
  return s;
}

void write_manifest(const std::string& path, const std::vector<DatasetEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path);
  out << "id,volume,label,split\n";
  for (const auto& e : entries) out << e.id << ',' << e.volume << ',' << e.label << ',' << e.split << '\n';
  if (!out) throw IoError("write failed for manifest " + path);
}

Dataset read_manifest(const std::string& path_in) {
  fs::path path(path_in);
  if (fs::is_directory(path)) path /= kManifestName;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Dataset ds;
  ds.root = path.parent_path().string();
  std::string line;
  if (!std::getline(in, line) || line != "id,volume,label,split") {
    throw FormatError(path.string() + ": expected header 'id,volume,label,split'");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() != 4) throw FormatError(path.string() + ": row " + std::to_string(row) + " needs 4 columns");
    if (cols[3] != "train" && cols[3] != "val" && cols[3] != "test") {
      throw FormatError(path.string() + ": row " + std::to_string(row) + " has unknown split '" + cols[3] + "'");
    }
    ds.entries.push_back(DatasetEntry{cols[0], cols[1], cols[2], cols[3]});
  }
  return ds;
}

Dataset generate_dataset(const PhantomSpec& spec, std::size_t count, const std::string& out_dir, SplitCounts split) {
  validate(spec);
  if (split.train + split.val + split.test != count) throw ConfigError("split counts must add up to the phantom count");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  Dataset ds;
  ds.root = out_dir;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "phantom_%04zu", i);
    const Phantom p = generate_phantom(spec, i);
    const std::string vol = std::string(id) + "_ct";
    const std::string lab = std::string(id) + "_label";
    save_volume((fs::path(out_dir) / vol).string(), p.volume);
    save_volume((fs::path(out_dir) / lab).string(), p.label);
    const char* s = i < split.train ? "train" : (i < split.train + split.val ? "val" : "test");
    ds.entries.push_back(DatasetEntry{id, vol, lab, s});
  }
  write_manifest((fs::path(out_dir) / kManifestName).string(), ds.entries);
  return ds;
}

}  // namespace calcseg
