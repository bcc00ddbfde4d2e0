// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "calcseg/inference.hpp"
#include "calcseg/trainer.hpp"

namespace calcseg {

/// One training variant, applied on top of a base training config.
struct AblationVariant {
  std::string name;
  BlockKind blocks = BlockKind::residual;
  bool dropout = true;  // false strips every dropout layer
  bool deep_supervision = true;
  bool masked = true;
};

struct AblationConfig {
  TrainConfig base;
  std::vector<AblationVariant> variants;
};

/// {"train": <path or object>, "rows": [{"name", "blocks", "dropout",
/// "deep_supervision", "masked"}, ...]} plus optional "dataset", "out_dir"
/// and "epochs" overrides of the base config.
AblationConfig parse_ablation_config(const nlohmann::json& j, const std::string& base_dir);
AblationConfig load_ablation_config(const std::string& path);

/// The base config with the variant's block kind, dropout and objective.
TrainConfig variant_config(const TrainConfig& base, const AblationVariant& v);

struct AblationRow {
  std::string name;
  EvalReport report;
  std::optional<stats::TTest> vs_previous;  // paired on per-image Dice; empty for the first row or no variance
};

struct AblationReport {
  std::vector<AblationRow> rows;
};

/// Rows must score the same images in the same order.
AblationReport build_ablation_report(std::vector<std::pair<std::string, EvalReport>> rows);

std::string format_ablation_table(const AblationReport& r);
nlohmann::json ablation_json(const AblationReport& r);

/// Long per-image table: row,id,intersection,predicted_voxels,truth_voxels,dice,predicted_mm3,truth_mm3
void write_ablation_csv(const std::string& path, const AblationReport& r);

}  // namespace calcseg
