// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/ablation.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "calcseg/error.hpp"

namespace calcseg {

using nlohmann::json;
namespace fs = std::filesystem;

AblationConfig parse_ablation_config(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ConfigError("ablation config must be a JSON object");
  if (!j.contains("train")) throw ConfigError("ablation config is missing field 'train'");
  AblationConfig c;
  const json& t = j.at("train");
  if (t.is_string()) {
    const fs::path p = fs::path(base_dir) / t.get<std::string>();
    c.base = load_train_config(p.lexically_normal().string());
  } else {
    c.base = parse_train_config(t, base_dir);
  }
  try {
    if (j.contains("dataset")) c.base.dataset = (fs::path(base_dir) / j.at("dataset").get<std::string>()).lexically_normal().string();
    if (j.contains("out_dir")) c.base.out_dir = (fs::path(base_dir) / j.at("out_dir").get<std::string>()).lexically_normal().string();
    if (j.contains("epochs")) c.base.epochs = j.at("epochs").get<long>();
    if (!j.contains("rows") || !j.at("rows").is_array() || j.at("rows").empty()) {
      throw ConfigError("field 'rows' must be a non-empty array");
    }
    for (const json& r : j.at("rows")) {
      AblationVariant v;
      v.name = r.at("name").get<std::string>();
      if (v.name.empty() || v.name.find_first_of(",\n\"") != std::string::npos) {
        throw ConfigError("row names must be non-empty and free of commas, quotes and newlines");
      }
      const std::string blocks = r.value("blocks", std::string("residual"));
      if (blocks == "plain") {
        v.blocks = BlockKind::plain;
      } else if (blocks != "residual") {
        throw ConfigError("row '" + v.name + "': field 'blocks' must be 'plain' or 'residual'");
      }
      v.dropout = r.value("dropout", v.dropout);
      v.deep_supervision = r.value("deep_supervision", v.deep_supervision);
      v.masked = r.value("masked", v.masked);
      c.variants.push_back(v);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ablation config: ") + e.what());
  }
  if (c.base.epochs < 0) throw ConfigError("field 'epochs' must be >= 0");
  return c;
}

AblationConfig load_ablation_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ablation config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_ablation_config(j, fs::path(path).parent_path().string());
}

TrainConfig variant_config(const TrainConfig& base, const AblationVariant& v) {
  TrainConfig c = base;
  for (LayerSpec& l : c.network.layers) {
    if (l.type != LayerType::block) continue;
    l.block.kind = v.blocks;
    if (!v.dropout) l.block.dropout = DropoutSpec{};
  }
  c.network.name = base.network.name + "/" + v.name;
  analyze(c.network);  // rejects combinations such as plain blocks with pre-add dropout into batchnorm
  c.deep_supervision = v.deep_supervision;
  c.masked = v.masked;
  return c;
}

AblationReport build_ablation_report(std::vector<std::pair<std::string, EvalReport>> rows) {
  AblationReport out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    AblationRow row{rows[i].first, std::move(rows[i].second), std::nullopt};
    if (i > 0) {
      const auto& prev = out.rows.back().report.images;
      const auto& cur = row.report.images;
      if (prev.size() != cur.size()) throw ContractError("ablation rows scored different numbers of images");
      std::vector<double> a, b;
      for (std::size_t k = 0; k < cur.size(); ++k) {
        if (prev[k].id != cur[k].id) throw ContractError("ablation rows scored different images");
        a.push_back(cur[k].dice);
        b.push_back(prev[k].dice);
      }
      if (a.size() >= 2) {
        try {
          row.vs_previous = stats::paired_ttest(a, b);
        } catch (const NumericError&) {
          row.vs_previous.reset();  // identical per-image Dice: no test
        }
      }
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string format_ablation_table(const AblationReport& r) {
  std::string s;
  char line[512];
  std::snprintf(line, sizeof line, "%-28s %9s %17s %7s %7s %7s %7s %9s\n", "method", "abs_dice", "mean_dice", "q1",
                "q2", "q3", "q4", "p_prev");
  s += line;
  for (const auto& row : r.rows) {
    const EvalReport& e = row.report;
    char md[64];
    std::snprintf(md, sizeof md, "%.4f +/- %.4f", e.mean_dice, e.sd_dice);
    char q[4][16];
    for (int k = 0; k < 4; ++k) {
      if (e.quarters_valid) {
        std::snprintf(q[k], sizeof q[k], "%.4f", e.quarter_dice[k]);
      } else {
        std::snprintf(q[k], sizeof q[k], "-");
      }
    }
    char p[32];
    if (row.vs_previous) {
      std::snprintf(p, sizeof p, "%.3g", row.vs_previous->p);
    } else {
      std::snprintf(p, sizeof p, "-");
    }
    std::snprintf(line, sizeof line, "%-28s %9.4f %17s %7s %7s %7s %7s %9s\n", row.name.c_str(), e.absolute_dice, md,
                  q[0], q[1], q[2], q[3], p);
    s += line;
  }
  return s;
}

json ablation_json(const AblationReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j = report_json(row.report);
    j["name"] = row.name;
    if (row.vs_previous) {
      j["t_vs_previous"] = row.vs_previous->t;
      j["df_vs_previous"] = row.vs_previous->df;
      j["p_vs_previous"] = row.vs_previous->p;
    } else {
      j["t_vs_previous"] = nullptr;
      j["df_vs_previous"] = nullptr;
      j["p_vs_previous"] = nullptr;
    }
    rows.push_back(j);
  }
  return json{{"rows", rows}};
}

void write_ablation_csv(const std::string& path, const AblationReport& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "row,id,intersection,predicted_voxels,truth_voxels,dice,predicted_mm3,truth_mm3\n";
  char line[256];
  for (const auto& row : r.rows) {
    for (const auto& s : row.report.images) {
      std::snprintf(line, sizeof line, "%zu,%zu,%zu,%.17g,%.17g,%.17g\n", s.overlap.intersection, s.overlap.size_a,
                    s.overlap.size_b, s.dice, s.predicted_mm3, s.truth_mm3);
      out << row.name << ',' << s.id << ',' << line;
    }
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace calcseg
