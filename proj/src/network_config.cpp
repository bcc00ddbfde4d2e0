// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/network_config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "calcseg/error.hpp"
#include "calcseg/hash.hpp"

namespace calcseg {

using nlohmann::json;

namespace {

constexpr const char* kAxis[3] = {"depth", "height", "width"};

std::string where(const std::string& layer, const std::string& field) {
  return "layer '" + layer + "' field '" + field + "'";
}

Extent3 read_extent(const json& j, const std::string& key, const Extent3& fallback, const std::string& layer) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(where(layer, key) + " must be an array of 3 integers");
  Extent3 e{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!v[i].is_number_integer() || v[i].get<long long>() < 1) {
      throw ConfigError(where(layer, key) + " entries must be integers >= 1");
    }
    e[i] = v[i].get<std::size_t>();
  }
  return e;
}

std::size_t read_features(const json& j, const std::string& layer) {
  if (!j.contains("features") || !j["features"].is_number_integer() || j["features"].get<long long>() < 1) {
    throw ConfigError(where(layer, "features") + " must be an integer >= 1");
  }
  return j["features"].get<std::size_t>();
}

ConvSpec read_conv(const json& j, const std::string& layer) {
  ConvSpec c;
  c.features = read_features(j, layer);
  if (!j.contains("kernel")) throw ConfigError(where(layer, "kernel") + " is required");
  c.kernel = read_extent(j, "kernel", {1, 1, 1}, layer);
  c.stride = read_extent(j, "stride", {1, 1, 1}, layer);
  return c;
}

json extent_json(const Extent3& e) { return json::array({e[0], e[1], e[2]}); }

json conv_json(const ConvSpec& c) {
  return json{{"features", c.features}, {"kernel", extent_json(c.kernel)}, {"stride", extent_json(c.stride)}};
}

const char* position_name(DropoutPosition p) {
  switch (p) {
    case DropoutPosition::none: return "none";
    case DropoutPosition::pre_conv1: return "pre_conv1";
    case DropoutPosition::pre_conv2: return "pre_conv2";
    case DropoutPosition::pre_add: return "pre_add";
  }
  return "none";
}

std::size_t taps(const Extent3& k) { return k[0] * k[1] * k[2]; }

}  // namespace

NetworkConfig parse_network_config(const json& j) {
  if (!j.is_object()) throw ConfigError("network config must be a JSON object");
  NetworkConfig cfg;
  try {
    cfg.name = j.value("name", std::string("unnamed"));
    cfg.input_channels = j.value("input_channels", std::size_t{1});
    cfg.input_offset = j.value("input_offset", 0.0);
    cfg.input_scale = j.value("input_scale", 1.0);
    cfg.head_batchnorm = j.value("head_batchnorm", true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config header: ") + e.what());
  }
  if (cfg.input_channels < 1) throw ConfigError("field 'input_channels' must be >= 1");
  if (!(cfg.input_scale > 0.0)) throw ConfigError("field 'input_scale' must be positive");
  if (!j.contains("layers") || !j["layers"].is_array()) throw ConfigError("field 'layers' must be an array");

  for (const json& lj : j["layers"]) {
    LayerSpec l;
    if (!lj.contains("name") || !lj["name"].is_string()) throw ConfigError("every layer needs a string 'name'");
    l.name = lj["name"].get<std::string>();
    const std::string type = lj.value("type", std::string());
    if (type == "conv") {
      l.type = LayerType::conv;
      l.conv = read_conv(lj, l.name);
      l.preact = lj.value("preact", true);
    } else if (type == "block") {
      l.type = LayerType::block;
      const std::string kind = lj.value("kind", std::string());
      if (kind == "plain") {
        l.block.kind = BlockKind::plain;
      } else if (kind == "residual") {
        l.block.kind = BlockKind::residual;
      } else {
        throw ConfigError(where(l.name, "kind") + " must be 'plain' or 'residual'");
      }
      if (!lj.contains("convs") || !lj["convs"].is_array() || lj["convs"].size() != 2) {
        throw ConfigError(where(l.name, "convs") + " must list exactly 2 convolutions");
      }
      for (std::size_t i = 0; i < 2; ++i) l.block.convs[i] = read_conv(lj["convs"][i], l.name);
      if (lj.contains("dropout") && !lj["dropout"].is_null()) {
        const json& d = lj["dropout"];
        const std::string pos = d.value("position", std::string("none"));
        if (pos == "none") {
          l.block.dropout.position = DropoutPosition::none;
        } else if (pos == "pre_conv1") {
          l.block.dropout.position = DropoutPosition::pre_conv1;
        } else if (pos == "pre_conv2") {
          l.block.dropout.position = DropoutPosition::pre_conv2;
        } else if (pos == "pre_add") {
          l.block.dropout.position = DropoutPosition::pre_add;
        } else {
          throw ConfigError(where(l.name, "dropout.position") + " unknown value '" + pos + "'");
        }
        l.block.dropout.p = d.value("p", 0.0);
        const std::string variant = d.value("variant", std::string("element"));
        if (variant == "element") {
          l.block.dropout.variant = layers::DropoutVariant::element;
        } else if (variant == "spatial") {
          l.block.dropout.variant = layers::DropoutVariant::spatial;
        } else {
          throw ConfigError(where(l.name, "dropout.variant") + " must be 'element' or 'spatial'");
        }
        if (!(l.block.dropout.p >= 0.0 && l.block.dropout.p < 1.0)) {
          throw ConfigError(where(l.name, "dropout.p") + " must lie in [0, 1)");
        }
      }
    } else if (type == "upsample") {
      l.type = LayerType::upsample;
      if (!lj.contains("factor")) throw ConfigError(where(l.name, "factor") + " is required");
      l.factor = read_extent(lj, "factor", {1, 1, 1}, l.name);
    } else if (type == "concat") {
      l.type = LayerType::concat;
      if (!lj.contains("from") || !lj["from"].is_array() || lj["from"].size() != 2) {
        throw ConfigError(where(l.name, "from") + " must name exactly 2 layers");
      }
      for (const json& f : lj["from"]) {
        if (!f.is_string()) throw ConfigError(where(l.name, "from") + " entries must be strings");
        l.from.push_back(f.get<std::string>());
      }
    } else {
      throw ConfigError(where(l.name, "type") + " must be conv, block, upsample, or concat");
    }
    cfg.layers.push_back(std::move(l));
  }
  if (!j.contains("aux_heads") || !j["aux_heads"].is_array()) throw ConfigError("field 'aux_heads' must be an array");
  for (const json& a : j["aux_heads"]) {
    if (!a.is_string()) throw ConfigError("field 'aux_heads' entries must be layer names");
    cfg.aux_heads.push_back(a.get<std::string>());
  }
  analyze(cfg);
  return cfg;
}

NetworkConfig load_network_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open network config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("network config " + path + " is not valid JSON: " + e.what());
  }
  return parse_network_config(j);
}

json to_json(const NetworkConfig& cfg) {
  json layers = json::array();
  for (const LayerSpec& l : cfg.layers) {
    json lj{{"name", l.name}};
    switch (l.type) {
      case LayerType::conv: {
        lj.update(conv_json(l.conv));
        lj["type"] = "conv";
        lj["preact"] = l.preact;
        break;
      }
      case LayerType::block: {
        lj["type"] = "block";
        lj["kind"] = l.block.kind == BlockKind::plain ? "plain" : "residual";
        lj["convs"] = json::array({conv_json(l.block.convs[0]), conv_json(l.block.convs[1])});
        lj["dropout"] = json{{"position", position_name(l.block.dropout.position)},
                             {"p", l.block.dropout.p},
                             {"variant", l.block.dropout.variant == layers::DropoutVariant::spatial ? "spatial"
                                                                                                    : "element"}};
        break;
      }
      case LayerType::upsample:
        lj["type"] = "upsample";
        lj["factor"] = extent_json(l.factor);
        break;
      case LayerType::concat:
        lj["type"] = "concat";
        lj["from"] = l.from;
        break;
    }
    layers.push_back(std::move(lj));
  }
  return json{{"name", cfg.name},
              {"input_channels", cfg.input_channels},
              {"input_offset", cfg.input_offset},
              {"input_scale", cfg.input_scale},
              {"head_batchnorm", cfg.head_batchnorm},
              {"layers", std::move(layers)},
              {"aux_heads", cfg.aux_heads}};
}

std::uint64_t config_hash(const NetworkConfig& cfg) { return fnv1a64(to_json(cfg).dump()); }

namespace {

// Does the layer at index i begin with batch normalization?
bool starts_with_bn(const LayerSpec& l) {
  return l.type == LayerType::block || (l.type == LayerType::conv && l.preact);
}

std::size_t head_params(std::size_t features, bool head_bn) {
  // preact BN, 1x1 conv to one feature, then either a bias or a BN.
  return 2 * features + features + (head_bn ? 2 : 1);
}

}  // namespace

Analysis analyze(const NetworkConfig& cfg) {
  if (cfg.layers.empty()) throw ConfigError("network config has no layers");
  Analysis an;
  std::map<std::string, std::size_t> index;
  std::size_t features = cfg.input_channels;
  Extent3 jump{1, 1, 1};
  Extent3 rf{1, 1, 1};

  auto add_conv = [&](const ConvSpec& c, const std::string& name) {
    for (int a = 0; a < 3; ++a) {
      if (c.kernel[a] < 1 || c.stride[a] < 1) throw ConfigError(where(name, "kernel/stride") + " must be >= 1");
      rf[a] += (c.kernel[a] - 1) * jump[a];
      jump[a] *= c.stride[a];
    }
    ++an.weighted_layers;
  };

  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    if (l.name.empty()) throw ConfigError("layer " + std::to_string(i) + " has an empty name");
    if (!index.emplace(l.name, i).second) throw ConfigError("duplicate layer name '" + l.name + "'");
    switch (l.type) {
      case LayerType::conv:
        if (l.conv.features < 1) throw ConfigError(where(l.name, "features") + " must be >= 1");
        if (l.preact) an.parameters += 2 * features;
        an.parameters += l.conv.features * features * taps(l.conv.kernel);
        add_conv(l.conv, l.name);
        features = l.conv.features;
        break;
      case LayerType::block: {
        const BlockSpec& b = l.block;
        if (b.kind == BlockKind::residual) {
          for (const ConvSpec& c : b.convs) {
            if (c.stride != Extent3{1, 1, 1}) throw ConfigError(where(l.name, "stride") + " must be 1 in a residual block");
          }
          if (b.convs[1].features != features) {
            throw ConfigError(where(l.name, "features") + ": residual block must output its " +
                              std::to_string(features) + " input features");
          }
          for (int a = 0; a < 3; ++a) {
            if ((b.convs[0].kernel[a] + b.convs[1].kernel[a]) % 2 != 0) {
              throw ConfigError(where(l.name, "kernel") + ": skip crop along " + kAxis[a] + " would be asymmetric");
            }
          }
        }
        if (b.dropout.position == DropoutPosition::pre_add && b.kind == BlockKind::plain && b.dropout.p > 0.0) {
          const bool feeds_bn_next = i + 1 < cfg.layers.size() && starts_with_bn(cfg.layers[i + 1]);
          const bool feeds_head = std::find(cfg.aux_heads.begin(), cfg.aux_heads.end(), l.name) != cfg.aux_heads.end() ||
                                  i + 1 == cfg.layers.size();
          if (feeds_bn_next || feeds_head) {
            throw ConfigError(where(l.name, "dropout.position") +
                              ": pre_add dropout in a plain block would directly precede batch normalization");
          }
        }
        an.parameters += 2 * features + b.convs[0].features * features * taps(b.convs[0].kernel);
        add_conv(b.convs[0], l.name);
        an.parameters += 2 * b.convs[0].features + b.convs[1].features * b.convs[0].features * taps(b.convs[1].kernel) +
                         b.convs[1].features;
        add_conv(b.convs[1], l.name);
        features = b.convs[1].features;
        break;
      }
      case LayerType::upsample:
        for (int a = 0; a < 3; ++a) {
          if (l.factor[a] < 1) throw ConfigError(where(l.name, "factor") + " must be >= 1");
          if (jump[a] % l.factor[a] != 0) {
            throw ConfigError(where(l.name, "factor") + ": upsampling by " + std::to_string(l.factor[a]) + " along " +
                              kAxis[a] + " exceeds the accumulated stride " + std::to_string(jump[a]));
          }
          jump[a] /= l.factor[a];
        }
        break;
      case LayerType::concat: {
        std::size_t f = 0;
        Extent3 r{0, 0, 0};
        for (std::size_t k = 0; k < l.from.size(); ++k) {
          auto it = index.find(l.from[k]);
          if (it == index.end() || it->second >= i) {
            throw ConfigError(where(l.name, "from") + ": '" + l.from[k] + "' is not an earlier layer");
          }
          const LayerInfo& src = an.layers[it->second];
          if (k > 0 && src.jump != an.layers[index[l.from[0]]].jump) {
            throw ConfigError(where(l.name, "from") + ": operands have different resolutions");
          }
          f += src.features;
          for (int a = 0; a < 3; ++a) r[a] = std::max(r[a], src.rf[a]);
          jump = src.jump;
        }
        features = f;
        rf = r;
        break;
      }
    }
    for (int a = 0; a < 3; ++a) an.period[a] = std::lcm(an.period[a], jump[a]);
    an.layers.push_back(LayerInfo{features, jump, rf});
  }
  if (jump != Extent3{1, 1, 1}) {
    throw ConfigError("final layer '" + cfg.layers.back().name + "' is not at input resolution (jump " +
                      extent_to_string(jump) + ")");
  }
  if (cfg.aux_heads.size() != kAuxHeads) {
    throw ConfigError("field 'aux_heads' must list exactly " + std::to_string(kAuxHeads) + " layers, got " +
                      std::to_string(cfg.aux_heads.size()));
  }
  for (const std::string& a : cfg.aux_heads) {
    auto it = index.find(a);
    if (it == index.end()) throw ConfigError("aux head attaches to unknown layer '" + a + "'");
    an.parameters += head_params(an.layers[it->second].features, cfg.head_batchnorm);
  }
  an.parameters += head_params(features, cfg.head_batchnorm);
  ++an.weighted_layers;  // final 1x1 classifier
  an.rf = rf;
  return an;
}

Extent3 receptive_field(const NetworkConfig& cfg) { return analyze(cfg).rf; }

Extent3 grid_period(const NetworkConfig& cfg) { return analyze(cfg).period; }

Extent3 default_tile_stride(const NetworkConfig& cfg, const Extent3& patch) {
  const Extent3 out = output_shape(cfg, patch);
  const Extent3 p = grid_period(cfg);
  Extent3 s{};
  for (int a = 0; a < 3; ++a) {
    if (out[a] < p[a]) {
      throw ShapeError("patch " + extent_to_string(patch) + " yields an output narrower than the grid period " +
                       extent_to_string(p));
    }
    s[a] = out[a] / p[a] * p[a];
  }
  return s;
}

Geometry plan(const NetworkConfig& cfg, const Extent3& in) {
  const Analysis an = analyze(cfg);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) index[cfg.layers[i].name] = i;

  Geometry g;
  g.in = in;
  g.concat_crop.resize(cfg.layers.size());
  Extent3 size = in;
  std::array<long, 3> c2{0, 0, 0};
  Extent3 jump{1, 1, 1};

  auto too_small = [&](const std::string& name, int a) {
    return ShapeError("input extent " + extent_to_string(in) + " is too small: layer '" + name + "' runs out of " +
                      kAxis[a] + " voxels (receptive field " + extent_to_string(an.rf) + ")");
  };
  auto apply_conv = [&](const ConvSpec& c, const std::string& name) {
    for (int a = 0; a < 3; ++a) {
      if (size[a] < c.kernel[a]) throw too_small(name, a);
      size[a] = (size[a] - c.kernel[a]) / c.stride[a] + 1;
      c2[a] += static_cast<long>((c.kernel[a] - 1) * jump[a]);
      jump[a] *= c.stride[a];
    }
  };

  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    switch (l.type) {
      case LayerType::conv:
        apply_conv(l.conv, l.name);
        break;
      case LayerType::block:
        apply_conv(l.block.convs[0], l.name);
        apply_conv(l.block.convs[1], l.name);
        break;
      case LayerType::upsample:
        for (int a = 0; a < 3; ++a) {
          jump[a] /= l.factor[a];
          size[a] *= l.factor[a];
          c2[a] -= static_cast<long>((l.factor[a] - 1) * jump[a]);
        }
        break;
      case LayerType::concat: {
        const std::size_t ia = index[l.from[0]];
        const std::size_t ib = index[l.from[1]];
        jump = an.layers[ia].jump;
        for (int a = 0; a < 3; ++a) {
          const std::size_t sa = g.sizes[ia][a];
          const std::size_t sb = g.sizes[ib][a];
          const std::size_t t = std::min(sa, sb);
          if ((sa - t) % 2 != 0 || (sb - t) % 2 != 0) {
            throw ShapeError("layer '" + l.name + "': operands " + std::to_string(sa) + " and " + std::to_string(sb) +
                             " along " + kAxis[a] + " cannot be cropped symmetrically for input " +
                             extent_to_string(in));
          }
          const long ca = g.center2[ia][a] + static_cast<long>((sa - t) * jump[a]);
          const long cb = g.center2[ib][a] + static_cast<long>((sb - t) * jump[a]);
          if (ca != cb) {
            throw ShapeError("layer '" + l.name + "': operands are not centre-aligned along " + kAxis[a] +
                             " for input " + extent_to_string(in));
          }
          size[a] = t;
          c2[a] = ca;
          g.concat_crop[i][0][a] = t;
          g.concat_crop[i][1][a] = t;
        }
        break;
      }
    }
    g.sizes.push_back(size);
    g.center2.push_back(c2);
  }
  g.out = size;
  for (int a = 0; a < 3; ++a) g.label_offset[a] = static_cast<std::size_t>(c2[a] / 2);

  for (std::size_t h = 0; h < kAuxHeads; ++h) {
    const std::size_t li = index.at(cfg.aux_heads[h]);
    const Extent3& J = an.layers[li].jump;
    for (int a = 0; a < 3; ++a) {
      const long up_c2 = g.center2[li][a] - static_cast<long>(J[a] - 1);
      const long diff = c2[a] - up_c2;
      const std::size_t up_size = g.sizes[li][a] * J[a];
      if (diff < 0 || static_cast<std::size_t>(diff / 2) + size[a] > up_size) {
        throw ShapeError("aux head on '" + cfg.aux_heads[h] + "' does not cover the final output grid along " +
                         kAxis[a] + " for input " + extent_to_string(in));
      }
      g.aux_offset[h][a] = static_cast<std::size_t>(diff / 2);
    }
  }
  return g;
}

Extent3 output_shape(const NetworkConfig& cfg, const Extent3& in) { return plan(cfg, in).out; }

}  // namespace calcseg
