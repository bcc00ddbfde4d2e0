// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "calcseg/error.hpp"

namespace calcseg {

template <typename T>
const Tensor<T>& Gradients<T>::operator[](const Var<T>& leaf) const {
  if (!leaf.tracked() || leaf.node().tape != tape_ || !leaf.node().leaf) {
    throw ContractError("gradient requested for a tensor that is not a leaf of this tape");
  }
  return by_index_.at(leaf.node().index);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->tape = this;
  n->index = nodes_.size();
  n->leaf = true;
  nodes_.push_back(n);
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->inputs.reserve(inputs.size());
  for (auto& v : inputs) n->inputs.push_back(v.ptr());
  n->backward = std::move(backward);
  n->tape = this;
  n->index = nodes_.size();
  nodes_.push_back(n);
  return Var<T>(std::move(n));
}

template <typename T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) const {
  if (!loss) throw ContractError("backward on an empty variable");
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  if (loss.node().tape != this || loss.node().index >= nodes_.size() ||
      nodes_[loss.node().index].get() != &loss.node()) {
    throw ContractError("loss was not recorded on this tape");
  }
  for (const auto& n : nodes_) n->grad = Tensor<T>();
  const std::size_t last = loss.node().index;
  nodes_[last]->grad_buffer()[0] = T{1};
  for (std::size_t i = last + 1; i-- > 0;) {
    Node<T>& n = *nodes_[i];
    if (n.leaf || n.grad.empty() || !n.backward) continue;
    n.backward(n);
    n.grad = Tensor<T>();  // intermediate gradients are not part of the result
  }
  Gradients<T> out;
  out.tape_ = this;
  for (const auto& n : nodes_) {
    if (!n->leaf) continue;
    out.by_index_.emplace(n->index, n->grad.empty() ? Tensor<T>(n->value.shape()) : n->grad);
  }
  return out;
}

template <typename T>
void Tape<T>::note_kink(std::uint64_t pattern_hash, std::size_t exact_zeros) {
  kink_signature_ = (kink_signature_ ^ pattern_hash) * 1099511628211ULL;
  kink_zeros_ += exact_zeros;
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : vars) {
    if (!v->tracked()) continue;
    if (tape && v->node().tape != tape) throw ContractError("operands recorded on different tapes");
    tape = v->node().tape;
  }
  return tape;
}

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                        shape_to_string(b.shape()));
  }
}

template <typename T>
bool wants(const Node<T>& n, std::size_t i) {
  return n.inputs[i]->tracked();
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  Tape<T>* tape = common_tape<T>({&a, &b});
  if (!tape) return constant(std::move(y));
  return tape->record(std::move(y), {a, b}, [](Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(n, k)) continue;
      auto& g = n.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  Tape<T>* tape = common_tape<T>({&a, &b});
  if (!tape) return constant(std::move(y));
  return tape->record(std::move(y), {a, b}, [](Node<T>& n) {
    if (wants(n, 0)) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants(n, 1)) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  Tape<T>* tape = common_tape<T>({&a, &b});
  if (!tape) return constant(std::move(y));
  return tape->record(std::move(y), {a, b}, [](Node<T>& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    if (wants(n, 0)) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants(n, 1)) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> y = a.value();
  for (auto& v : y.data()) v *= s;
  if (!a.tracked()) return constant(std::move(y));
  return a.node().tape->record(std::move(y), {a}, [s](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> y = a.value();
  for (auto& v : y.data()) v += s;
  if (!a.tracked()) return constant(std::move(y));
  return a.node().tape->record(std::move(y), {a}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> y = a.value();
  for (auto& v : y.data()) v = std::exp(v);
  if (!a.tracked()) return constant(std::move(y));
  return a.node().tape->record(std::move(y), {a}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
  });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > T{0})) {
      throw DomainError("log of non-positive value " + std::to_string(y[i]) + " at index " + std::to_string(i));
    }
    y[i] = std::log(y[i]);
  }
  if (!a.tracked()) return constant(std::move(y));
  return a.node().tape->record(std::move(y), {a}, [](Node<T>& n) {
    const auto& x = n.inputs[0]->value;
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / x[i];
  });
}

template <typename T>
Var<T> max0(const Var<T>& a) {
  Tensor<T> y = a.value();
  for (auto& v : y.data()) v = v > T{0} ? v : T{0};
  if (!a.tracked()) return constant(std::move(y));
  Tape<T>* tape = a.node().tape;
  std::uint64_t h = 1469598103934665603ULL;
  std::size_t zeros = 0;
  for (const T v : a.value().data()) {
    const std::uint64_t s = v > T{0} ? 2 : (v == T{0} ? 1 : 0);
    zeros += s == 1;
    h = (h ^ s) * 1099511628211ULL;
  }
  tape->note_kink(h, zeros);
  return tape->record(std::move(y), {a}, [](Node<T>& n) {
    const auto& x = n.inputs[0]->value;
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T{0}) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> reduce_sum(const Var<T>& a, std::span<const std::size_t> axes) {
  const Shape& in = a.shape();
  std::vector<bool> reduced(in.size(), axes.empty());
  for (std::size_t ax : axes) {
    if (ax >= in.size()) {
      throw ContractError("reduce_sum: axis " + std::to_string(ax) + " invalid for shape " + shape_to_string(in));
    }
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!reduced[i]) out_shape.push_back(in[i]);
  }
  // Output stride of each input axis (0 for reduced axes).
  std::vector<std::size_t> ostride(in.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    if (reduced[i]) continue;
    ostride[i] = s;
    s *= in[i];
  }
  auto out_index = std::make_shared<std::vector<std::size_t>>(a.value().size());
  {
    std::vector<std::size_t> idx(in.size(), 0);
    for (std::size_t flat = 0; flat < a.value().size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t i = 0; i < in.size(); ++i) o += idx[i] * ostride[i];
      (*out_index)[flat] = o;
      for (std::size_t i = in.size(); i-- > 0;) {
        if (++idx[i] < in[i]) break;
        idx[i] = 0;
      }
    }
  }
  Tensor<T> y(out_shape);
  for (std::size_t flat = 0; flat < a.value().size(); ++flat) y[(*out_index)[flat]] += a.value()[flat];
  if (!a.tracked()) return constant(std::move(y));
  return a.node().tape->record(std::move(y), {a}, [out_index](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[(*out_index)[i]];
  });
}

FdReport finite_diff_check(const ScalarFn& f, const Tensor<double>& x, double eps,
                           std::span<const std::size_t> coords) {
  struct Eval {
    double value;
    std::uint64_t signature;
  };
  auto evaluate = [&f](const Tensor<double>& at) {
    Tape<double> tape;
    Var<double> leaf = tape.leaf(at);
    Var<double> out = f(leaf);
    if (out.value().size() != 1) throw ContractError("finite_diff_check: f must return a scalar");
    return Eval{out.value()[0], tape.kink_signature()};
  };

  Tape<double> tape;
  Var<double> leaf = tape.leaf(x);
  Var<double> out = f(leaf);
  if (!std::isfinite(out.value()[0])) throw NumericError("finite_diff_check: f is non-finite at the base point");
  const Gradients<double> grads = tape.backward(out);
  const Tensor<double>& analytic = grads[leaf];

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  FdReport report;
  Tensor<double> probe = x;
  for (std::size_t i : coords) {
    if (i >= x.size()) throw ContractError("finite_diff_check: coordinate " + std::to_string(i) + " out of range");
    const double orig = probe[i];
    // Shrink the step while the stencil straddles a kink.
    double numeric = 0.0;
    bool smooth = false;
    for (double h = eps; !smooth && h >= eps * 1e-3; h *= 0.1) {
      std::array<Eval, 4> at{};  // x + 2h, x + h, x - h, x - 2h
      const std::array<double, 4> step{2.0 * h, h, -h, -2.0 * h};
      for (std::size_t k = 0; k < 4; ++k) {
        probe[i] = orig + step[k];
        at[k] = evaluate(probe);
        if (!std::isfinite(at[k].value)) {
          probe[i] = orig;
          throw NumericError("finite_diff_check: f is non-finite when perturbing coordinate " + std::to_string(i));
        }
      }
      probe[i] = orig;
      smooth = std::all_of(at.begin(), at.end(), [&](const Eval& e) { return e.signature == at[0].signature; });
      numeric = (8.0 * (at[1].value - at[2].value) - (at[0].value - at[3].value)) / (12.0 * h);
    }
    if (!smooth) {
      report.flagged.push_back(i);
      continue;
    }
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    ++report.checked;
    if (report.checked == 1 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

#define CALCSEG_INSTANTIATE(T)                                                         \
  template class Gradients<T>;                                                         \
  template class Tape<T>;                                                              \
  template Tape<T>* common_tape<T>(std::initializer_list<const Var<T>*>);              \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> scale<T>(const Var<T>&, T);                                          \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                     \
  template Var<T> exp<T>(const Var<T>&);                                               \
  template Var<T> log<T>(const Var<T>&);                                               \
  template Var<T> max0<T>(const Var<T>&);                                              \
  template Var<T> reduce_sum<T>(const Var<T>&, std::span<const std::size_t>);

CALCSEG_INSTANTIATE(float)
CALCSEG_INSTANTIATE(double)

#undef CALCSEG_INSTANTIATE

}  // namespace calcseg
