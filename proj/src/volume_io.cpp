// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "calcseg/error.hpp"

namespace calcseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string stem_of(const std::string& path) {
  if (path.size() > 5 && path.compare(path.size() - 5, 5, ".json") == 0) return path.substr(0, path.size() - 5);
  return path;
}

template <typename V>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<V, float>) {
    return "float32";
  } else {
    return "uint8";
  }
}

template <typename V>
std::vector<char> to_le_bytes(const std::vector<V>& data) {
  std::vector<char> bytes(data.size() * sizeof(V));
  std::memcpy(bytes.data(), data.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big && sizeof(V) > 1) {
    for (std::size_t i = 0; i < data.size(); ++i) std::reverse(bytes.begin() + i * sizeof(V), bytes.begin() + (i + 1) * sizeof(V));
  }
  return bytes;
}

template <typename V>
void save_grid(const std::string& stem_in, const Grid<V>& g) {
  const std::string stem = stem_of(stem_in);
  if (g.data.size() != g.dims[0] * g.dims[1] * g.dims[2]) throw ContractError("volume buffer does not match its dims");
  const fs::path raw = stem + ".raw";
  json header{{"dims", {g.dims[0], g.dims[1], g.dims[2]}},
              {"spacing_mm", {g.spacing[0], g.spacing[1], g.spacing[2]}},
              {"dtype", dtype_name<V>()},
              {"axis_order", {kAxisLabels[0], kAxisLabels[1], kAxisLabels[2]}},
              {"byte_order", "little"},
              {"elements", g.data.size()},
              {"data_file", raw.filename().string()}};
  {
    std::ofstream out(stem + ".json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + stem + ".json");
    out << header.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + stem + ".json");
  }
  const std::vector<char> bytes = to_le_bytes(g.data);
  std::ofstream out(raw, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + raw.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + raw.string());
}

struct Header {
  Extent3 dims{};
  Spacing spacing{};
  std::string dtype;
  std::size_t elements = 0;
  fs::path raw;
};

Header read_header(const std::string& path) {
  const std::string stem = stem_of(path);
  const std::string jpath = stem + ".json";
  std::ifstream in(jpath);
  if (!in) throw IoError("cannot open volume header " + jpath);
  Header h;
  try {
    json j;
    in >> j;
    for (int a = 0; a < 3; ++a) {
      h.dims[a] = j.at("dims").at(a).get<std::size_t>();
      h.spacing[a] = j.at("spacing_mm").at(a).get<double>();
    }
    h.dtype = j.at("dtype").get<std::string>();
    h.elements = j.at("elements").get<std::size_t>();
    h.raw = fs::path(jpath).parent_path() / j.at("data_file").get<std::string>();
    if (j.value("byte_order", std::string("little")) != "little") throw FormatError(jpath + ": byte_order must be little");
  } catch (const json::exception& e) {
    throw FormatError(jpath + ": malformed volume header: " + e.what());
  }
  if (h.elements != h.dims[0] * h.dims[1] * h.dims[2]) {
    throw FormatError(jpath + ": element count " + std::to_string(h.elements) + " disagrees with dims " +
                      extent_to_string(h.dims));
  }
  for (double s : h.spacing) {
    if (!(s > 0.0)) throw FormatError(jpath + ": spacing must be positive");
  }
  if (h.dtype != "float32" && h.dtype != "uint8") throw FormatError(jpath + ": unknown dtype '" + h.dtype + "'");
  return h;
}

template <typename V>
Grid<V> read_raw(const Header& h) {
  std::ifstream in(h.raw, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open volume data " + h.raw.string());
  const auto actual = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = h.elements * sizeof(V);
  if (actual != expected) {
    throw FormatError(h.raw.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(actual));
  }
  in.seekg(0);
  Grid<V> g(h.dims, h.spacing);
  in.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IoError("read failed for " + h.raw.string());
  if constexpr (std::endian::native == std::endian::big && sizeof(V) > 1) {
    auto* b = reinterpret_cast<char*>(g.data.data());
    for (std::size_t i = 0; i < g.data.size(); ++i) std::reverse(b + i * sizeof(V), b + (i + 1) * sizeof(V));
  }
  return g;
}

}  // namespace

std::string sidecar_path(const std::string& path) { return stem_of(path) + ".json"; }

void save_volume(const std::string& stem, const Volume& v) { save_grid(stem, v); }
void save_volume(const std::string& stem, const LabelVolume& v) { save_grid(stem, v); }

Volume load_volume(const std::string& path) {
  const Header h = read_header(path);
  if (h.dtype != "float32") throw FormatError(sidecar_path(path) + ": expected dtype float32, got " + h.dtype);
  return read_raw<float>(h);
}

LabelVolume load_label_volume(const std::string& path) {
  const Header h = read_header(path);
  if (h.dtype != "uint8") throw FormatError(sidecar_path(path) + ": expected dtype uint8, got " + h.dtype);
  return read_raw<std::uint8_t>(h);
}

Volume load_any_as_float(const std::string& path) {
  const Header h = read_header(path);
  if (h.dtype == "float32") return read_raw<float>(h);
  const LabelVolume l = read_raw<std::uint8_t>(h);
  Volume v(l.dims, l.spacing);
  for (std::size_t i = 0; i < l.size(); ++i) v.data[i] = static_cast<float>(l.data[i]);
  return v;
}

}  // namespace calcseg
