// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "calcseg/error.hpp"

namespace calcseg {

std::vector<std::uint8_t> intensity_mask(std::span<const float> hu, float threshold) {
  std::vector<std::uint8_t> m(hu.size());
  for (std::size_t i = 0; i < hu.size(); ++i) m[i] = hu[i] > threshold ? 1 : 0;
  return m;
}

template <typename T>
MaskedLoss<T> masked_weighted_bce(const Var<T>& logit, const Tensor<T>& labels, std::span<const std::uint8_t> mask,
                                  T pos_weight) {
  const Tensor<T>& z = logit.value();
  if (labels.shape() != z.shape() || mask.size() != z.size()) {
    throw ContractError("masked_weighted_bce: logits " + shape_to_string(z.shape()) + ", labels " +
                        shape_to_string(labels.shape()) + ", mask of " + std::to_string(mask.size()) +
                        " voxels are not aligned");
  }
  MaskedLoss<T> r;
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!mask[i]) continue;
    ++r.supervised;
    const double zi = z[i];
    const double yi = labels[i];
    const double w = yi > 0.5 ? static_cast<double>(pos_weight) : 1.0;
    acc += w * (std::max(zi, 0.0) - yi * zi + std::log1p(std::exp(-std::abs(zi))));
  }
  r.empty_mask = r.supervised == 0;
  Tensor<T> value = Tensor<T>::scalar(static_cast<T>(acc));
  if (!logit.tracked()) {
    r.loss = constant(std::move(value));
    return r;
  }
  auto lab = std::make_shared<Tensor<T>>(labels);
  auto msk = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  r.loss = logit.node().tape->record(std::move(value), {logit}, [lab, msk, pos_weight](Node<T>& n) {
    const Tensor<T>& zv = n.inputs[0]->value;
    auto& g = n.inputs[0]->grad_buffer();
    const T up = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(*msk)[i]) continue;
      const T y = (*lab)[i];
      const T w = y > T(0.5) ? pos_weight : T{1};
      const T zi = zv[i];
      const T s = zi >= T{0} ? T{1} / (T{1} + std::exp(-zi)) : std::exp(zi) / (T{1} + std::exp(zi));
      g[i] += up * w * (s - y);
    }
  });
  return r;
}

template <typename T>
Var<T> total_loss(const Var<T>& main, std::span<const Var<T>> aux, std::span<const T> weights) {
  if (aux.size() != 6 || weights.size() != 6) {
    throw ContractError("total_loss: expected 6 auxiliary losses and weights, got " + std::to_string(aux.size()) +
                        " and " + std::to_string(weights.size()));
  }
  Var<T> total = main;
  for (std::size_t i = 0; i < aux.size(); ++i) total = add(total, scale(aux[i], weights[i]));
  return total;
}

double schedule_value(const ScheduleSet& s, ScheduleKind which, long epoch) {
  if (epoch < 0) throw ContractError("schedule_value: negative epoch " + std::to_string(epoch));
  switch (which) {
    case ScheduleKind::lr:
      return epoch <= s.lr_last_initial_epoch ? s.lr_initial : s.lr_final;
    case ScheduleKind::momentum:
      return epoch <= s.momentum_last_initial_epoch ? s.momentum_initial : s.momentum_final;
    case ScheduleKind::pos_weight:
      return epoch <= s.pos_weight_last_initial_epoch ? s.pos_weight_initial : s.pos_weight_final;
    case ScheduleKind::aux:
      return std::max(0.0, 1.0 - static_cast<double>(epoch) / s.aux_decay_epochs);
  }
  return 0.0;
}

ScheduleSet parse_schedule(const nlohmann::json& j) {
  ScheduleSet s;
  if (j.is_null()) return s;
  if (!j.is_object()) throw ConfigError("field 'schedule' must be an object");
  try {
    s.lr_initial = j.value("lr_initial", s.lr_initial);
    s.lr_final = j.value("lr_final", s.lr_final);
    s.lr_last_initial_epoch = j.value("lr_last_initial_epoch", s.lr_last_initial_epoch);
    s.momentum_initial = j.value("momentum_initial", s.momentum_initial);
    s.momentum_final = j.value("momentum_final", s.momentum_final);
    s.momentum_last_initial_epoch = j.value("momentum_last_initial_epoch", s.momentum_last_initial_epoch);
    s.pos_weight_initial = j.value("pos_weight_initial", s.pos_weight_initial);
    s.pos_weight_final = j.value("pos_weight_final", s.pos_weight_final);
    s.pos_weight_last_initial_epoch = j.value("pos_weight_last_initial_epoch", s.pos_weight_last_initial_epoch);
    s.aux_decay_epochs = j.value("aux_decay_epochs", s.aux_decay_epochs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("field 'schedule': ") + e.what());
  }
  for (double v : {s.lr_initial, s.lr_final, s.momentum_initial, s.momentum_final, s.pos_weight_initial,
                   s.pos_weight_final}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("field 'schedule': values must be finite and >= 0");
  }
  if (s.momentum_initial >= 1.0 || s.momentum_final >= 1.0) throw ConfigError("field 'schedule': momentum must be < 1");
  if (!(s.aux_decay_epochs > 0.0)) throw ConfigError("field 'schedule.aux_decay_epochs' must be positive");
  return s;
}

nlohmann::json to_json(const ScheduleSet& s) {
  return nlohmann::json{{"lr_initial", s.lr_initial},
                        {"lr_final", s.lr_final},
                        {"lr_last_initial_epoch", s.lr_last_initial_epoch},
                        {"momentum_initial", s.momentum_initial},
                        {"momentum_final", s.momentum_final},
                        {"momentum_last_initial_epoch", s.momentum_last_initial_epoch},
                        {"pos_weight_initial", s.pos_weight_initial},
                        {"pos_weight_final", s.pos_weight_final},
                        {"pos_weight_last_initial_epoch", s.pos_weight_last_initial_epoch},
                        {"aux_decay_epochs", s.aux_decay_epochs}};
}

template MaskedLoss<float> masked_weighted_bce<float>(const Var<float>&, const Tensor<float>&,
                                                      std::span<const std::uint8_t>, float);
template MaskedLoss<double> masked_weighted_bce<double>(const Var<double>&, const Tensor<double>&,
                                                        std::span<const std::uint8_t>, double);
template Var<float> total_loss<float>(const Var<float>&, std::span<const Var<float>>, std::span<const float>);
template Var<double> total_loss<double>(const Var<double>&, std::span<const Var<double>>, std::span<const double>);

}  // namespace calcseg
