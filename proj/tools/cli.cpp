// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "calcseg/ablation.hpp"
#include "calcseg/checkpoint.hpp"
#include "calcseg/dataset.hpp"
#include "calcseg/error.hpp"
#include "calcseg/gradcheck.hpp"
#include "calcseg/hash.hpp"
#include "calcseg/inference.hpp"
#include "calcseg/kernels/conv.hpp"
#include "calcseg/network_config.hpp"
#include "calcseg/phantom.hpp"
#include "calcseg/stats.hpp"
#include "calcseg/trainer.hpp"

namespace calcseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Global {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  int threads = 0;
  std::string isa;
  std::vector<std::string> args;
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json extent_json(const Extent3& e) { return json::array({e[0], e[1], e[2]}); }

// Records what produced a directory: the merged config, seeds and a hash of
// every artifact. Wall-clock fields are left out under --deterministic so
// that repeated runs produce identical directories.
void write_run_manifest(const Global& g, const std::string& dir, const std::string& subcommand, const json& config,
                        const std::vector<std::string>& artifacts, double seconds) {
  json hashes = json::object();
  for (const auto& a : artifacts) {
    const fs::path p = fs::path(dir) / a;
    if (fs::exists(p)) hashes[a] = hex64(fnv1a64_file(p.string()));
  }
  json m{{"subcommand", subcommand},
         {"args", g.args},
         {"config", config},
         {"seed", g.seed ? json(*g.seed) : json(nullptr)},
         {"deterministic", g.deterministic},
         {"isa", kernels::isa_name(kernels::active_isa())},
         {"artifacts", hashes}};
  if (g.deterministic) {
    m["timestamp"] = nullptr;
    m["elapsed_seconds"] = nullptr;
    m["threads"] = nullptr;
  } else {
    m["timestamp"] = utc_timestamp();
    m["elapsed_seconds"] = seconds;
    m["threads"] = omp_get_max_threads();
  }
  const std::string path = (fs::path(dir) / "run_manifest.json").string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << m.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Extent3 parse_extent_flag(const std::vector<std::size_t>& v, const char* flag) {
  if (v.size() != 3) throw ConfigError(std::string(flag) + " takes three values: depth height width");
  for (std::size_t x : v) {
    if (x == 0) throw ConfigError(std::string(flag) + " values must be positive");
  }
  return {v[0], v[1], v[2]};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void apply_train_overrides(const Global& g, TrainConfig& cfg) {
  if (g.seed) cfg.seed = *g.seed;
  if (g.deterministic) cfg.deterministic = true;
}

std::vector<ImageScore> score_split(Network<float>& net, const std::vector<LoadedVolume>& vols, const Extent3& patch,
                                    const Extent3& stride, double prob_thresh) {
  std::vector<ImageScore> scores;
  for (const auto& v : vols) {
    const Prediction p = tile_predict(net, v.image, patch, stride);
    scores.push_back(score_image(v.id, segment(p.probability, v.image, prob_thresh), v.label));
  }
  return scores;
}

// ---- subcommands ----

int cmd_generate(const Global& g, const std::string& spec_path, std::size_t count, const std::string& out_dir,
                 const std::vector<std::size_t>& split, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  PhantomSpec spec = spec_path.empty() ? PhantomSpec{} : parse_phantom_spec(read_json_file(spec_path));
  if (g.seed) spec.seed = *g.seed;
  validate(spec);
  SplitCounts sc = default_split(count);
  if (!split.empty()) {
    if (split.size() != 3 || split[0] + split[1] + split[2] != count) {
      throw ConfigError("--split takes three counts (train val test) summing to --count");
    }
    sc = {split[0], split[1], split[2]};
  }
  const Dataset ds = generate_dataset(spec, count, out_dir, sc);
  std::vector<std::string> artifacts{kManifestName};
  for (const auto& e : ds.entries) {
    for (const std::string& stem : {e.volume, e.label}) {
      artifacts.push_back(stem);
      artifacts.push_back(sidecar_path(stem));
    }
  }
  std::sort(artifacts.begin(), artifacts.end());
  artifacts.erase(std::unique(artifacts.begin(), artifacts.end()), artifacts.end());
  json cfg{{"phantom", to_json(spec)},
           {"count", count},
           {"split", {{"train", sc.train}, {"val", sc.val}, {"test", sc.test}}}};
  write_run_manifest(g, out_dir, "generate", cfg, artifacts, seconds_since(t0));
  out << "generated " << count << " phantoms in " << out_dir << " (train " << sc.train << ", val " << sc.val
      << ", test " << sc.test << ")\n";
  return kExitOk;
}

int cmd_train(const Global& g, const std::string& config_path, const std::string& data, const std::string& out_dir,
              std::optional<long> epochs, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = load_train_config(config_path);
  apply_train_overrides(g, cfg);
  if (!data.empty()) cfg.dataset = data;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (epochs) {
    if (*epochs < 0) throw ConfigError("--epochs must be >= 0");
    cfg.epochs = *epochs;
  }
  if (cfg.dataset.empty()) throw ConfigError("training config field 'dataset' is empty; pass --data");
  if (cfg.out_dir.empty()) throw ConfigError("training config field 'out_dir' is empty; pass --out");
  const Dataset ds = read_manifest(cfg.dataset);
  const auto train_set = load_split(ds, "train");
  const auto val_set = load_split(ds, "val");
  Network<float> net = Network<float>::build(cfg.network, cfg.seed);
  out << "training " << cfg.network.name << " (" << net.parameter_count() << " parameters) on " << train_set.size()
      << " volumes, validating on " << val_set.size() << "\n";
  const TrainResult r = train(cfg, std::move(net), train_set, val_set, [&](const EpochLog& e) {
    char line[256];
    std::snprintf(line, sizeof line,
                  "epoch %ld lr %.3g momentum %.3g pos_weight %.4g aux %.3f train_loss %.6g val_loss %.6g "
                  "val_dice %.4f skipped %zu\n",
                  e.epoch, e.lr, e.momentum, e.pos_weight, e.aux_weight, e.train_loss, e.val_loss, e.val_dice,
                  e.skipped);
    out << line << std::flush;
  });
  write_run_manifest(g, cfg.out_dir, "train", to_json(cfg), {"best.ckpt", "last.ckpt", "train_log.csv"},
                     seconds_since(t0));
  out << "best epoch " << r.best_epoch << ", " << r.skipped << " empty-mask patches skipped\n";
  return kExitOk;
}

int cmd_infer(const Global& g, const std::string& ckpt_path, const std::string& data, const std::string& split,
              const std::string& out_dir, const std::vector<std::size_t>& patch_flag,
              const std::vector<std::size_t>& stride_flag, double prob_thresh, double hu_thresh, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  Checkpoint ck = load_checkpoint(ckpt_path);
  const Dataset ds = read_manifest(data);
  std::vector<DatasetEntry> entries = split == "all" ? ds.entries : ds.split(split);
  fs::create_directories(out_dir);
  const std::string list_path = (fs::path(out_dir) / "predictions.csv").string();
  std::ofstream list(list_path, std::ios::trunc);
  if (!list) throw IoError("cannot write " + list_path);
  list << "id,probability,segmentation\n";
  std::vector<std::string> artifacts{"predictions.csv"};
  json cfg{{"checkpoint", ckpt_path},
           {"checkpoint_hash", hex64(fnv1a64_file(ckpt_path))},
           {"config_hash", hex64(ck.config_hash)},
           {"dataset", data},
           {"split", split},
           {"prob_thresh", prob_thresh},
           {"hu_thresh", hu_thresh}};
  json tiles = json::array();
  for (const auto& e : entries) {
    const Volume vol = load_volume(ds.resolve(e.volume));
    const Extent3 patch = patch_flag.empty() ? vol.dims : parse_extent_flag(patch_flag, "--patch");
    const Extent3 stride =
        stride_flag.empty() ? default_tile_stride(ck.network.config(), patch) : parse_extent_flag(stride_flag, "--stride");
    const Prediction p = tile_predict(ck.network, vol, patch, stride);
    const LabelVolume seg = segment(p.probability, vol, prob_thresh, hu_thresh);
    const std::string prob_stem = e.id + "_prob";
    const std::string seg_stem = e.id + "_seg";
    save_volume((fs::path(out_dir) / prob_stem).string(), p.probability);
    save_volume((fs::path(out_dir) / seg_stem).string(), seg);
    list << e.id << ',' << prob_stem << ".json," << seg_stem << ".json\n";
    for (const auto& s : {prob_stem, seg_stem}) {
      artifacts.push_back(s + ".json");
      artifacts.push_back(s + ".raw");
    }
    tiles.push_back({{"id", e.id}, {"patch", extent_json(patch)}, {"stride", extent_json(stride)}, {"tiles", p.tiles}});
  }
  list.close();
  if (!list) throw IoError("write failed for " + list_path);
  cfg["tiling"] = tiles;
  write_run_manifest(g, out_dir, "infer", cfg, artifacts, seconds_since(t0));
  out << "wrote " << entries.size() << " predictions to " << out_dir << "\n";
  return kExitOk;
}

int cmd_evaluate(const Global& g, const std::string& pred_dir, const std::string& data, const std::string& split,
                 const std::string& out_dir_flag, std::size_t bins, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset ds = read_manifest(data);
  const std::string out_dir = out_dir_flag.empty() ? pred_dir : out_dir_flag;
  fs::create_directories(out_dir);
  std::vector<ImageScore> scores;
  for (const auto& e : split == "all" ? ds.entries : ds.split(split)) {
    const LabelVolume pred = load_label_volume((fs::path(pred_dir) / (e.id + "_seg.json")).string());
    const LabelVolume truth = load_label_volume(ds.resolve(e.label));
    scores.push_back(score_image(e.id, pred, truth));
  }
  const EvalReport rep = summarize(std::move(scores));
  json j = report_json(rep);
  if (bins > 0 && !rep.images.empty()) {
    std::vector<double> pv, tv;
    for (const auto& s : rep.images) {
      pv.push_back(s.predicted_mm3);
      tv.push_back(s.truth_mm3);
    }
    const stats::Hist2d h = stats::hist2d_equal_count(tv, pv, bins);
    j["volume_hist2d"] = {{"bins", h.bins},
                          {"truth_edges", h.x_edges},
                          {"predicted_edges", h.y_edges},
                          {"counts", h.counts}};
  }
  write_report_csv((fs::path(out_dir) / "eval_images.csv").string(), rep);
  {
    const std::string path = (fs::path(out_dir) / "eval_report.json").string();
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << '\n';
  }
  write_run_manifest(g, out_dir, "evaluate", {{"predictions", pred_dir}, {"dataset", data}, {"split", split}, {"bins", bins}},
                     {"eval_images.csv", "eval_report.json"}, seconds_since(t0));
  char line[256];
  std::snprintf(line, sizeof line, "images %zu absolute_dice %.4f mean_dice %.4f sd %.4f", rep.images.size(),
                rep.absolute_dice, rep.mean_dice, rep.sd_dice);
  out << line;
  if (rep.icc_valid) {
    std::snprintf(line, sizeof line, " icc %.4f", rep.icc);
    out << line;
  }
  out << "\n";
  return kExitOk;
}

int cmd_rf(const std::string& config_path, const std::vector<std::size_t>& input_flag, std::ostream& out) {
  const NetworkConfig cfg = load_network_config(config_path);
  const Analysis a = analyze(cfg);
  // Height, width, depth: the in-plane axes first, as receptive fields are usually quoted.
  out << a.rf[1] << ' ' << a.rf[2] << ' ' << a.rf[0] << '\n';
  std::optional<Geometry> geo;
  if (!input_flag.empty()) geo = plan(cfg, parse_extent_flag(input_flag, "--input"));
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-9s %8s %-12s %-12s %s\n", "layer", "type", "features", "jump", "rf",
                geo ? "extent" : "");
  out << line;
  static const char* kTypes[] = {"conv", "block", "upsample", "concat"};
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerInfo& li = a.layers[i];
    std::snprintf(line, sizeof line, "%-10s %-9s %8zu %-12s %-12s %s\n", cfg.layers[i].name.c_str(),
                  kTypes[static_cast<int>(cfg.layers[i].type)], li.features, extent_to_string(li.jump).c_str(),
                  extent_to_string(li.rf).c_str(), geo ? extent_to_string(geo->sizes[i]).c_str() : "");
    out << line;
  }
  out << "weighted layers " << a.weighted_layers << ", parameters " << a.parameters << "\n";
  if (geo) {
    out << "input " << extent_to_string(geo->in) << " -> output " << extent_to_string(geo->out) << ", label offset "
        << extent_to_string(geo->label_offset) << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const Global& g, double tol, std::ostream& out) {
  const auto checks = run_gradcheck_suite(g.seed.value_or(1));
  bool ok = true;
  char line[256];
  for (const auto& c : checks) {
    const bool pass = gradcheck_passed(c, tol);
    ok = ok && pass;
    std::snprintf(line, sizeof line, "%-4s %-44s max_rel_error %.3e checked %zu kinks %zu\n", pass ? "ok" : "FAIL",
                  c.name.c_str(), c.report.max_rel_error, c.report.checked, c.report.flagged.size());
    out << line;
  }
  out << (ok ? "all " : "some ") << checks.size() << " checks " << (ok ? "passed" : "failed") << " (tolerance " << tol
      << ")\n";
  return ok ? kExitOk : kExitNumeric;
}

int cmd_ablate(const Global& g, const std::string& config_path, const std::string& data, const std::string& out_flag,
               std::optional<long> epochs, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  AblationConfig ac = load_ablation_config(config_path);
  apply_train_overrides(g, ac.base);
  if (!data.empty()) ac.base.dataset = data;
  if (!out_flag.empty()) ac.base.out_dir = out_flag;
  if (epochs) ac.base.epochs = *epochs;
  if (ac.base.dataset.empty()) throw ConfigError("ablation dataset is empty; pass --data");
  if (ac.base.out_dir.empty()) throw ConfigError("ablation out_dir is empty; pass --out");
  const std::string root = ac.base.out_dir;
  const Dataset ds = read_manifest(ac.base.dataset);
  const auto train_set = load_split(ds, "train");
  const auto val_set = load_split(ds, "val");
  const auto test_set = load_split(ds, "test");

  std::vector<std::pair<std::string, EvalReport>> rows;
  json variants = json::array();
  std::vector<std::string> artifacts{"ablation.json", "ablation_images.csv", "ablation.txt"};
  for (std::size_t i = 0; i < ac.variants.size(); ++i) {
    const AblationVariant& v = ac.variants[i];
    TrainConfig cfg = variant_config(ac.base, v);
    const std::string sub = "row" + std::to_string(i + 1);
    cfg.out_dir = (fs::path(root) / sub).string();
    out << "[" << (i + 1) << "/" << ac.variants.size() << "] " << v.name << "\n" << std::flush;
    TrainResult r = train(cfg, Network<float>::build(cfg.network, cfg.seed), train_set, val_set);
    EvalReport rep = summarize(score_split(r.best, test_set, cfg.infer_patch, cfg.infer_stride, cfg.prob_thresh));
    rows.emplace_back(v.name, std::move(rep));
    variants.push_back(to_json(cfg));
    for (const char* f : {"best.ckpt", "last.ckpt", "train_log.csv"}) artifacts.push_back(sub + "/" + f);
  }
  const AblationReport report = build_ablation_report(std::move(rows));
  const std::string table = format_ablation_table(report);
  write_ablation_csv((fs::path(root) / "ablation_images.csv").string(), report);
  {
    std::ofstream f((fs::path(root) / "ablation.json").string(), std::ios::trunc);
    if (!f) throw IoError("cannot write ablation.json in " + root);
    f << ablation_json(report).dump(2) << '\n';
    std::ofstream t((fs::path(root) / "ablation.txt").string(), std::ios::trunc);
    if (!t) throw IoError("cannot write ablation.txt in " + root);
    t << table;
  }
  write_run_manifest(g, root, "ablate", {{"variants", variants}}, artifacts, seconds_since(t0));
  out << table;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"3D FCN calcification segmentation"};
  app.require_subcommand(1);
  Global g;
  g.args = args;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed overriding the config");
  app.add_flag("--deterministic", g.deterministic, "Reproducible outputs: no wall-clock fields in manifests");
  app.add_option("--threads", g.threads, "OpenMP threads (0 keeps the default)")->check(CLI::NonNegativeNumber);
  app.add_option("--isa", g.isa, "Convolution kernels: scalar or avx2 (default: best available)")
      ->check(CLI::IsMember({"scalar", "avx2"}));

  std::string spec_path, out_dir, config_path, data, split = "test", ckpt, pred_dir;
  std::size_t count = 0, bins = 0;
  std::vector<std::size_t> split_counts, patch, stride, input;
  long epochs_value = 0;
  double prob_thresh = 0.5, hu_thresh = kCalcificationHu, tol = 1e-5;

  auto* gen = app.add_subcommand("generate", "Write a synthetic phantom dataset and its manifest");
  gen->add_option("--spec", spec_path, "Phantom spec (JSON); defaults when omitted");
  gen->add_option("--count", count, "Number of phantoms")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--split", split_counts, "train val test counts")->expected(3);

  auto* tr = app.add_subcommand("train", "Train a network");
  tr->add_option("--config", config_path, "Training config (JSON)")->required();
  tr->add_option("--data", data, "Dataset manifest overriding the config");
  tr->add_option("--out", out_dir, "Output directory overriding the config");
  auto* tr_epochs = tr->add_option("--epochs", epochs_value, "Epochs overriding the config");

  auto* inf = app.add_subcommand("infer", "Predict probability and segmentation volumes");
  inf->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  inf->add_option("--data", data, "Dataset manifest")->required();
  inf->add_option("--split", split, "train, val, test or all");
  inf->add_option("--out", out_dir, "Output directory")->required();
  inf->add_option("--patch", patch, "Inference patch: depth height width (default: whole volume)")->expected(3);
  inf->add_option("--stride", stride, "Tile stride (default: the patch's output extent)")->expected(3);
  inf->add_option("--prob-thresh", prob_thresh, "Probability threshold");
  inf->add_option("--hu-thresh", hu_thresh, "Intensity threshold in HU");

  auto* ev = app.add_subcommand("evaluate", "Score predicted segmentations against labels");
  ev->add_option("--pred", pred_dir, "Directory written by infer")->required();
  ev->add_option("--data", data, "Dataset manifest holding the labels")->required();
  ev->add_option("--split", split, "train, val, test or all");
  ev->add_option("--out", out_dir, "Report directory (default: --pred)");
  ev->add_option("--bins", bins, "Equal-count bins for a predicted-vs-true volume histogram (0: none)");

  auto* rf = app.add_subcommand("rf", "Print the receptive field (height width depth) and layer table");
  rf->add_option("--config", config_path, "Network config (JSON)")->required();
  rf->add_option("--input", input, "Input extent for an output-shape table: depth height width")->expected(3);

  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--tol", tol, "Maximum relative error");

  auto* ab = app.add_subcommand("ablate", "Train and compare the configured variants");
  ab->add_option("--config", config_path, "Ablation config (JSON)")->required();
  ab->add_option("--data", data, "Dataset manifest overriding the config");
  ab->add_option("--out", out_dir, "Output directory overriding the config");
  auto* ab_epochs = ab->add_option("--epochs", epochs_value, "Epochs overriding the config");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (g.threads > 0) omp_set_num_threads(g.threads);
    if (!g.isa.empty()) kernels::set_isa(g.isa == "avx2" ? kernels::Isa::avx2 : kernels::Isa::scalar);
    if (*gen) return cmd_generate(g, spec_path, count, out_dir, split_counts, out);
    if (*tr) {
      return cmd_train(g, config_path, data, out_dir, *tr_epochs ? std::optional<long>(epochs_value) : std::nullopt,
                       out);
    }
    if (*inf) return cmd_infer(g, ckpt, data, split, out_dir, patch, stride, prob_thresh, hu_thresh, out);
    if (*ev) return cmd_evaluate(g, pred_dir, data, split, out_dir, bins, out);
    if (*rf) return cmd_rf(config_path, input, out);
    if (*gc) return cmd_gradcheck(g, tol, out);
    if (*ab) {
      return cmd_ablate(g, config_path, data, out_dir, *ab_epochs ? std::optional<long>(epochs_value) : std::nullopt,
                        out);
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitInvalid;
}

}  // namespace calcseg
