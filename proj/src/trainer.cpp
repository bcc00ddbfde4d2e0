// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "calcseg/checkpoint.hpp"
#include "calcseg/error.hpp"
#include "calcseg/inference.hpp"

namespace calcseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Extent3 extent_field(const json& j, const char* key, const Extent3& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(std::string("field '") + key + "' must be [depth, height, width]");
  Extent3 e{};
  for (int a = 0; a < 3; ++a) {
    if (!v[a].is_number_integer() || v[a].get<long long>() < 1) {
      throw ConfigError(std::string("field '") + key + "' must hold positive integers");
    }
    e[a] = v[a].get<std::size_t>();
  }
  return e;
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

}  // namespace

TrainConfig parse_train_config(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c;
  if (!j.contains("network")) throw ConfigError("training config is missing field 'network'");
  const json& n = j.at("network");
  if (n.is_string()) {
    c.network = load_network_config(resolve(base_dir, n.get<std::string>()));
  } else {
    c.network = parse_network_config(n);
  }
  try {
    c.dataset = resolve(base_dir, j.value("dataset", std::string{}));
    c.out_dir = resolve(base_dir, j.value("out_dir", std::string{}));
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.flip = j.value("flip", c.flip);
    c.deep_supervision = j.value("deep_supervision", c.deep_supervision);
    c.masked = j.value("masked", c.masked);
    c.prob_thresh = j.value("prob_thresh", c.prob_thresh);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.patch = extent_field(j, "patch", c.patch);
  c.infer_patch = extent_field(j, "infer_patch", c.patch);
  c.schedule = parse_schedule(j.contains("schedule") ? j.at("schedule") : json());
  if (c.epochs < 0) throw ConfigError("field 'epochs' must be >= 0");
  const Extent3 rf = receptive_field(c.network);
  for (int a = 0; a < 3; ++a) {
    if (c.patch[a] < rf[a] || c.infer_patch[a] < rf[a]) {
      throw ConfigError("patch " + extent_to_string(c.patch) + " / inference patch " + extent_to_string(c.infer_patch) +
                        " is smaller than the receptive field " + extent_to_string(rf));
    }
  }
  try {
    plan(c.network, c.patch);
    c.infer_stride = extent_field(j, "infer_stride", default_tile_stride(c.network, c.infer_patch));
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_train_config(j, fs::path(path).parent_path().string());
}

json to_json(const TrainConfig& c) {
  auto ext = [](const Extent3& e) { return json::array({e[0], e[1], e[2]}); };
  return json{{"network", to_json(c.network)},
              {"dataset", c.dataset},
              {"out_dir", c.out_dir},
              {"patch", ext(c.patch)},
              {"infer_patch", ext(c.infer_patch)},
              {"infer_stride", ext(c.infer_stride)},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"deterministic", c.deterministic},
              {"flip", c.flip},
              {"deep_supervision", c.deep_supervision},
              {"masked", c.masked},
              {"prob_thresh", c.prob_thresh},
              {"schedule", to_json(c.schedule)}};
}

OptimizerState make_optimizer(const Network<float>& net) {
  OptimizerState s;
  for (const auto& p : net.parameters()) s.velocity.push_back(Tensor<float>::zeros(p.value.shape()));
  return s;
}

void sgd_momentum_step(std::vector<Network<float>::Parameter>& params, const std::vector<const Tensor<float>*>& grads,
                       OptimizerState& state, double lr, double mu) {
  if (grads.size() != params.size() || state.velocity.size() != params.size()) {
    throw ContractError("sgd_momentum_step: " + std::to_string(params.size()) + " parameters, " +
                        std::to_string(grads.size()) + " gradients, " + std::to_string(state.velocity.size()) +
                        " velocity buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->shape() != params[i].value.shape() || state.velocity[i].shape() != params[i].value.shape()) {
      throw ContractError("sgd_momentum_step: shape mismatch for " + params[i].name);
    }
    for (float g : grads[i]->data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter " + params[i].name);
    }
  }
  const float flr = static_cast<float>(lr);
  const float fmu = static_cast<float>(mu);
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i].value.raw();
    float* v = state.velocity[i].raw();
    const float* g = grads[i]->raw();
    for (std::size_t k = 0; k < params[i].value.size(); ++k) {
      v[k] = fmu * v[k] - flr * g[k];
      p[k] += v[k];
    }
  }
}

Patch sample_patch(const Volume& vol, const LabelVolume& labels, const Extent3& size, Rng& rng) {
  if (vol.dims != labels.dims) {
    throw ContractError("sample_patch: volume " + extent_to_string(vol.dims) + " and labels " +
                        extent_to_string(labels.dims) + " differ");
  }
  for (int a = 0; a < 3; ++a) {
    if (size[a] > vol.dims[a]) {
      throw ContractError("sample_patch: patch " + extent_to_string(size) + " exceeds volume " +
                          extent_to_string(vol.dims));
    }
  }
  Patch p;
  for (int a = 0; a < 3; ++a) p.corner[a] = uniform_index(rng, vol.dims[a] - size[a] + 1);
  p.image = Volume(size, vol.spacing);
  p.label = LabelVolume(size, labels.spacing);
  for (std::size_t d = 0; d < size[0]; ++d) {
    for (std::size_t h = 0; h < size[1]; ++h) {
      const std::size_t src = vol.index(p.corner[0] + d, p.corner[1] + h, p.corner[2]);
      const std::size_t dst = p.image.index(d, h, 0);
      std::copy_n(vol.data.begin() + src, size[2], p.image.data.begin() + dst);
      std::copy_n(labels.data.begin() + src, size[2], p.label.data.begin() + dst);
    }
  }
  return p;
}

void flip_frontal(Patch& p) {
  const std::size_t w = p.image.dims[kFrontalAxis];
  const std::size_t rows = p.image.size() / w;
  for (std::size_t r = 0; r < rows; ++r) {
    std::reverse(p.image.data.begin() + r * w, p.image.data.begin() + (r + 1) * w);
    std::reverse(p.label.data.begin() + r * w, p.label.data.begin() + (r + 1) * w);
  }
  p.flipped = !p.flipped;
}

bool augment_flip(Patch& p, Rng& rng) {
  const bool flip = uniform01(rng) < 0.5;
  if (flip) flip_frontal(p);
  return flip;
}

std::vector<LoadedVolume> load_split(const Dataset& ds, const std::string& split) {
  std::vector<LoadedVolume> out;
  for (const auto& e : ds.split(split)) {
    LoadedVolume v{e.id, load_volume(ds.resolve(e.volume)), load_label_volume(ds.resolve(e.label))};
    if (v.image.dims != v.label.dims) {
      throw FormatError("image " + e.id + ": volume " + extent_to_string(v.image.dims) + " and label " +
                        extent_to_string(v.label.dims) + " differ in size");
    }
    out.push_back(std::move(v));
  }
  return out;
}

Validation validate(Network<float>& net, const std::vector<LoadedVolume>& vols, const TrainConfig& cfg) {
  Validation v;
  if (vols.empty()) return v;
  double loss_sum = 0.0;
  double dice_sum = 0.0;
  for (const auto& lv : vols) {
    const Prediction pred = tile_predict(net, lv.image, cfg.infer_patch, cfg.infer_stride);
    double loss = 0.0;
    for (std::size_t d = pred.covered_lo[0]; d < pred.covered_hi[0]; ++d) {
      for (std::size_t h = pred.covered_lo[1]; h < pred.covered_hi[1]; ++h) {
        for (std::size_t w = pred.covered_lo[2]; w < pred.covered_hi[2]; ++w) {
          const std::size_t i = lv.image.index(d, h, w);
          if (cfg.masked && !(lv.image.data[i] > kCalcificationHu)) continue;
          const double p = std::clamp(static_cast<double>(pred.probability.data[i]), 1e-7, 1.0 - 1e-7);
          loss -= lv.label.data[i] ? std::log(p) : std::log1p(-p);
        }
      }
    }
    loss_sum += loss;
    const LabelVolume seg = segment(pred.probability, lv.image, cfg.prob_thresh);
    dice_sum += stats::dice(seg.data, lv.label.data);
  }
  v.loss = loss_sum / static_cast<double>(vols.size());
  v.dice = dice_sum / static_cast<double>(vols.size());
  return v;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,lr,momentum,pos_weight,aux_weight,train_loss,val_loss,val_dice\n";
  char line[512];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.lr, e.momentum,
                  e.pos_weight, e.aux_weight, e.train_loss, e.val_loss, e.val_dice);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path);
}

TrainResult train(const TrainConfig& cfg, Network<float> net, const std::vector<LoadedVolume>& train_set,
                  const std::vector<LoadedVolume>& val_set, const EpochCallback& on_epoch) {
  if (cfg.epochs > 0 && train_set.empty()) throw ContractError("train: the training split is empty");
  const Geometry g = plan(net.config(), cfg.patch);
  Rng sampler = derive_stream(cfg.seed, 1);
  Rng dropout_rng = derive_stream(cfg.seed, 2);
  OptimizerState opt = make_optimizer(net);

  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
  const auto out_path = [&](const char* name) { return (fs::path(cfg.out_dir) / name).string(); };
  auto rng_text = [&] {
    std::ostringstream s;
    s << sampler << ' ' << dropout_rng;
    return s.str();
  };

  TrainResult result{net, net, 0, {}, 0};
  if (!cfg.out_dir.empty()) {
    // Epoch 0: the initial network, so a run always leaves a usable checkpoint.
    save_checkpoint(out_path("best.ckpt"), net, 0, rng_text());
    save_checkpoint(out_path("last.ckpt"), net, 0, rng_text());
    write_train_log(out_path("train_log.csv"), {});
  }
  double best_val = 0.0;
  std::vector<std::size_t> order(train_set.size());
  Tensor<float> input(Shape{1, cfg.patch[0], cfg.patch[1], cfg.patch[2]});
  Tensor<float> labels(Shape{1, g.out[0], g.out[1], g.out[2]});
  std::vector<std::uint8_t> mask(labels.size());

  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = schedule_value(cfg.schedule, ScheduleKind::lr, epoch);
    log.momentum = schedule_value(cfg.schedule, ScheduleKind::momentum, epoch);
    log.pos_weight = schedule_value(cfg.schedule, ScheduleKind::pos_weight, epoch);
    log.aux_weight = cfg.deep_supervision ? schedule_value(cfg.schedule, ScheduleKind::aux, epoch) : 0.0;

    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(sampler, i)]);

    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const LoadedVolume& lv = train_set[idx];
      Patch p = sample_patch(lv.image, lv.label, cfg.patch, sampler);
      if (cfg.flip) augment_flip(p, sampler);
      std::copy(p.image.data.begin(), p.image.data.end(), input.raw());
      std::size_t k = 0;
      for (std::size_t d = 0; d < g.out[0]; ++d) {
        for (std::size_t h = 0; h < g.out[1]; ++h) {
          for (std::size_t w = 0; w < g.out[2]; ++w, ++k) {
            const std::size_t s = p.image.index(d + g.label_offset[0], h + g.label_offset[1], w + g.label_offset[2]);
            labels[k] = p.label.data[s] ? 1.0f : 0.0f;
            mask[k] = !cfg.masked || p.image.data[s] > kCalcificationHu ? 1 : 0;
          }
        }
      }
      if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
        ++log.skipped;
        continue;
      }

      Tape<float> tape;
      const ForwardResult<float> r = net.forward(input, layers::Mode::train, dropout_rng, &tape);
      const float pw = static_cast<float>(log.pos_weight);
      Var<float> loss = masked_weighted_bce(r.logit, labels, mask, pw).loss;
      if (log.aux_weight > 0.0) {
        std::array<Var<float>, kAuxHeads> aux;
        std::array<float, kAuxHeads> weights;
        for (std::size_t a = 0; a < kAuxHeads; ++a) {
          aux[a] = masked_weighted_bce(r.aux_logit[a], labels, mask, pw).loss;
          weights[a] = static_cast<float>(log.aux_weight);
        }
        loss = total_loss<float>(loss, aux, weights);
      }
      const float value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + " on image " + lv.id +
                           (cfg.out_dir.empty() ? "" : "; last checkpoint kept at " + out_path("last.ckpt")));
      }
      const Gradients<float> grads = tape.backward(loss);
      std::vector<const Tensor<float>*> gp;
      gp.reserve(r.params.size());
      for (const auto& v : r.params) gp.push_back(&grads[v]);
      sgd_momentum_step(net.parameters(), gp, opt, log.lr, log.momentum);
      loss_sum += value;
      ++log.steps;
    }
    log.train_loss = log.steps ? loss_sum / static_cast<double>(log.steps) : 0.0;
    result.skipped += log.skipped;

    const Validation v = validate(net, val_set, cfg);
    log.val_loss = v.loss;
    log.val_dice = v.dice;
    if (result.best_epoch == 0 || v.loss < best_val) {
      best_val = v.loss;
      result.best_epoch = epoch;
      result.best = net;
      if (!cfg.out_dir.empty()) save_checkpoint(out_path("best.ckpt"), net, epoch, rng_text());
    }
    if (!cfg.out_dir.empty()) save_checkpoint(out_path("last.ckpt"), net, epoch, rng_text());
    result.log.push_back(log);
    if (!cfg.out_dir.empty()) write_train_log(out_path("train_log.csv"), result.log);
    if (on_epoch) on_epoch(log);
  }
  result.last = net;
  return result;
}

}  // namespace calcseg
