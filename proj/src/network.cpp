// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/network.hpp"

#include <cmath>

#include "calcseg/error.hpp"

namespace calcseg {

using layers::Mode;

template <typename T>
Var<T> apply_block(const BlockSpec& spec, const BlockParams<T>& p, const Var<T>& x, Mode mode, Rng& rng,
                   const std::vector<std::uint8_t>* forced_keep) {
  const DropoutSpec& d = spec.dropout;
  auto drop = [&](const Var<T>& h, DropoutPosition at) {
    if (d.position != at) return h;
    if (forced_keep) return layers::dropout_with_mask(h, *forced_keep, d.p, d.variant);
    return layers::dropout(h, d.p, mode, d.variant, rng);
  };
  Var<T> h = layers::relu(layers::batchnorm(x, p.bn1_gamma, p.bn1_beta, *p.bn1, mode));
  h = drop(h, DropoutPosition::pre_conv1);
  h = layers::conv3d_valid(h, p.w1, Var<T>(), spec.convs[0].stride);
  h = layers::relu(layers::batchnorm(h, p.bn2_gamma, p.bn2_beta, *p.bn2, mode));
  h = drop(h, DropoutPosition::pre_conv2);
  h = layers::conv3d_valid(h, p.w2, p.b2, spec.convs[1].stride);
  h = drop(h, DropoutPosition::pre_add);
  if (spec.kind == BlockKind::residual) h = add(h, layers::crop_center(x, h.value().spatial()));
  return h;
}

template <typename T>
Tensor<T> ForwardResult<T>::probability() const {
  return layers::sigmoid(constant(logit.value())).value();
}

template <typename T>
Tensor<T> ForwardResult<T>::aux_probability(std::size_t i) const {
  return layers::sigmoid(constant(aux_logit.at(i).value())).value();
}

template <typename T>
int Network<T>::add_param(const std::string& name, Shape shape) {
  params_.push_back(Parameter{name, Tensor<T>(std::move(shape))});
  return static_cast<int>(params_.size() - 1);
}

template <typename T>
int Network<T>::add_bn(const std::string& name, std::size_t features) {
  bns_.push_back(BatchNorm{name, layers::BNState<T>(features)});
  return static_cast<int>(bns_.size() - 1);
}

template <typename T>
typename Network<T>::ConvSlot Network<T>::add_conv(const std::string& prefix, std::size_t in, const ConvSpec& c,
                                                   bool preact, bool bias, const std::string& bn_name) {
  ConvSlot s;
  if (preact) {
    s.bn = add_bn(prefix + "." + bn_name, in);
    s.gamma = add_param(prefix + "." + bn_name + ".gamma", Shape{in});
    s.beta = add_param(prefix + "." + bn_name + ".beta", Shape{in});
  }
  const std::string conv = bn_name == "bn" ? "conv" : "conv" + bn_name.substr(2);
  s.weight = add_param(prefix + "." + conv + ".weight", Shape{c.features, in, c.kernel[0], c.kernel[1], c.kernel[2]});
  if (bias) s.bias = add_param(prefix + "." + conv + ".bias", Shape{c.features});
  return s;
}

template <typename T>
typename Network<T>::HeadSlots Network<T>::add_head(const std::string& prefix, std::size_t in) {
  HeadSlots h;
  h.conv = add_conv(prefix, in, ConvSpec{1, {1, 1, 1}, {1, 1, 1}}, true, !cfg_.head_batchnorm, "bn");
  if (cfg_.head_batchnorm) {
    h.post_bn = add_bn(prefix + ".out_bn", 1);
    h.post_gamma = add_param(prefix + ".out_bn.gamma", Shape{1});
    h.post_beta = add_param(prefix + ".out_bn.beta", Shape{1});
  }
  return h;
}

template <typename T>
Network<T> Network<T>::build(const NetworkConfig& cfg, std::uint64_t seed) {
  const Analysis an = analyze(cfg);
  Network net;
  net.cfg_ = cfg;
  net.seed_ = seed;
  std::size_t features = cfg.input_channels;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    LayerSlots s;
    if (l.type == LayerType::conv) {
      s.first = net.add_conv(l.name, features, l.conv, l.preact, false, "bn");
    } else if (l.type == LayerType::block) {
      s.first = net.add_conv(l.name, features, l.block.convs[0], true, false, "bn1");
      s.second = net.add_conv(l.name, l.block.convs[0].features, l.block.convs[1], true, true, "bn2");
    }
    net.slots_.push_back(s);
    features = an.layers[i].features;
  }
  net.main_head_ = net.add_head("head.main", features);
  for (std::size_t h = 0; h < kAuxHeads; ++h) {
    std::size_t li = 0;
    while (cfg.layers[li].name != cfg.aux_heads[h]) ++li;
    net.aux_heads_[h] = net.add_head("head.aux" + std::to_string(h + 1), an.layers[li].features);
    net.aux_jump_[h] = an.layers[li].jump;
  }

  Rng rng = derive_stream(seed, 0);
  for (Parameter& p : net.params_) {
    const std::string& n = p.name;
    if (n.size() > 7 && n.compare(n.size() - 7, 7, ".weight") == 0) {
      const std::size_t fan_in = p.value.size() / p.value.dim(0);
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : p.value.data()) v = static_cast<T>(sd * standard_normal(rng));
    } else if (n.size() > 6 && n.compare(n.size() - 6, 6, ".gamma") == 0) {
      p.value.fill(T{1});
    }
  }
  return net;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

template <typename T>
const Geometry& Network<T>::geometry_for(const Extent3& in) {
  auto it = geometry_cache_.find(in);
  if (it == geometry_cache_.end()) it = geometry_cache_.emplace(in, plan(cfg_, in)).first;
  return it->second;
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& input, Mode mode, Rng& rng, Tape<T>* tape) {
  std::vector<Var<T>> params;
  params.reserve(params_.size());
  for (const Parameter& p : params_) params.push_back(tape ? tape->leaf(p.value) : constant(p.value));
  return forward_bound(constant(input), std::move(params), mode, rng);
}

template <typename T>
ForwardResult<T> Network<T>::forward_bound(const Var<T>& input, std::vector<Var<T>> params, Mode mode, Rng& rng) {
  if (input.value().rank() != 4 || input.value().dim(0) != cfg_.input_channels) {
    throw ShapeError("network input must be (" + std::to_string(cfg_.input_channels) +
                     ", depth, height, width), got " + shape_to_string(input.shape()));
  }
  if (params.size() != params_.size()) {
    throw ContractError("forward_bound: expected " + std::to_string(params_.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != params_[i].value.shape()) {
      throw ShapeError("forward_bound: parameter " + params_[i].name + " has shape " +
                       shape_to_string(params[i].shape()) + ", expected " + shape_to_string(params_[i].value.shape()));
    }
  }
  ForwardResult<T> r;
  r.geometry = geometry_for(input.value().spatial());
  const Geometry& g = r.geometry;

  const T inv = static_cast<T>(1.0 / cfg_.input_scale);
  const Var<T> xn = add_scalar(scale(input, inv), static_cast<T>(-cfg_.input_offset) * inv);

  r.params = std::move(params);
  const auto& P = r.params;
  auto opt = [&](int i) { return i < 0 ? Var<T>() : P[static_cast<std::size_t>(i)]; };

  auto conv = [&](const ConvSlot& s, Var<T> x, const Extent3& stride) {
    if (s.bn >= 0) {
      x = layers::relu(layers::batchnorm(x, P[s.gamma], P[s.beta], bns_[s.bn].state, mode));
    }
    return layers::conv3d_valid(x, P[s.weight], opt(s.bias), stride);
  };
  auto head = [&](const HeadSlots& h, const Var<T>& x, const Extent3& jump, const Extent3& offset) {
    Var<T> z = conv(h.conv, x, {1, 1, 1});
    if (h.post_bn >= 0) z = layers::batchnorm(z, P[h.post_gamma], P[h.post_beta], bns_[h.post_bn].state, mode);
    if (jump != Extent3{1, 1, 1}) z = layers::upsample_nn(z, jump);
    if (z.value().spatial() != g.out) z = layers::crop_window(z, offset, g.out);
    return z;
  };

  std::vector<Var<T>> out;
  out.reserve(cfg_.layers.size());
  std::map<std::string, std::size_t> index;
  Var<T> x = xn;
  for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
    const LayerSpec& l = cfg_.layers[i];
    const LayerSlots& s = slots_[i];
    switch (l.type) {
      case LayerType::conv:
        x = conv(s.first, x, l.conv.stride);
        break;
      case LayerType::block: {
        BlockParams<T> bp;
        bp.bn1_gamma = P[s.first.gamma];
        bp.bn1_beta = P[s.first.beta];
        bp.w1 = P[s.first.weight];
        bp.bn2_gamma = P[s.second.gamma];
        bp.bn2_beta = P[s.second.beta];
        bp.w2 = P[s.second.weight];
        bp.b2 = opt(s.second.bias);
        bp.bn1 = &bns_[s.first.bn].state;
        bp.bn2 = &bns_[s.second.bn].state;
        x = apply_block(l.block, bp, x, mode, rng);
        break;
      }
      case LayerType::upsample:
        x = layers::upsample_nn(x, l.factor);
        break;
      case LayerType::concat:
        x = layers::concat_features(layers::crop_center(out[index.at(l.from[0])], g.concat_crop[i][0]),
                                    layers::crop_center(out[index.at(l.from[1])], g.concat_crop[i][1]));
        break;
    }
    index[l.name] = i;
    out.push_back(x);
  }
  if (x.value().spatial() != g.out) throw ContractError("forward produced an unexpected output extent");

  r.logit = head(main_head_, x, {1, 1, 1}, {0, 0, 0});
  for (std::size_t h = 0; h < kAuxHeads; ++h) {
    const std::size_t li = index.at(cfg_.aux_heads[h]);
    r.aux_logit[h] = head(aux_heads_[h], out[li], aux_jump_[h], g.aux_offset[h]);
  }
  return r;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> n = Network<U>::build(cfg_, seed_);
  for (std::size_t i = 0; i < params_.size(); ++i) n.params_[i].value = tensor_cast<U>(params_[i].value);
  for (std::size_t i = 0; i < bns_.size(); ++i) {
    const auto& s = bns_[i].state;
    auto& d = n.bns_[i].state;
    d.running_mean = tensor_cast<U>(s.running_mean);
    d.running_var = tensor_cast<U>(s.running_var);
    d.momentum = static_cast<U>(s.momentum);
    d.eps = static_cast<U>(s.eps);
    d.updates = s.updates;
  }
  return n;
}

template Var<float> apply_block<float>(const BlockSpec&, const BlockParams<float>&, const Var<float>&, Mode, Rng&,
                                       const std::vector<std::uint8_t>*);
template Var<double> apply_block<double>(const BlockSpec&, const BlockParams<double>&, const Var<double>&, Mode,
                                         Rng&, const std::vector<std::uint8_t>*);
template struct ForwardResult<float>;
template struct ForwardResult<double>;
template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;

}  // namespace calcseg
