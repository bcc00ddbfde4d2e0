// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "calcseg/tensor.hpp"

namespace calcseg {

template <typename T>
class Tape;

/// One value in the computation graph. Tracked nodes belong to a tape and
/// carry a backward rule that pushes their gradient into their inputs.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something accumulates into it
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  Tape<T>* tape = nullptr;
  std::size_t index = 0;  // position on the tape
  bool leaf = false;

  bool tracked() const noexcept { return tape != nullptr; }

  /// Gradient accumulator, zero-initialized on first use.
  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool tracked() const { return node_ && node_->tracked(); }
  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// An untracked value: ops on constants compute values only and keep no graph.
template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var<T>(std::move(n));
}

/// Gradients of a scalar with respect to every leaf on a tape.
template <typename T>
class Gradients {
 public:
  const Tensor<T>& operator[](const Var<T>& leaf) const;
  std::size_t size() const { return by_index_.size(); }

 private:
  friend class Tape<T>;
  const Tape<T>* tape_ = nullptr;
  std::unordered_map<std::size_t, Tensor<T>> by_index_;
};

/// Ordered record of tracked operations.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Node<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value);

  /// Append a tracked node. Inputs are kept alive for the backward rule.
  Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Safe to call repeatedly.
  Gradients<T> backward(const Var<T>& loss) const;

  std::size_t size() const { return nodes_.size(); }

  /// Activation-pattern bookkeeping for finite-difference checks: every
  /// rectifier folds the sign pattern of its input into the signature.
  void note_kink(std::uint64_t pattern_hash, std::size_t exact_zeros);
  std::uint64_t kink_signature() const { return kink_signature_; }
  std::size_t kink_zeros() const { return kink_zeros_; }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  std::uint64_t kink_signature_ = 1469598103934665603ULL;
  std::size_t kink_zeros_ = 0;
};

/// Tape shared by the tracked operands, or nullptr if all are constants.
/// Throws ContractError if tracked operands live on different tapes.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars);

// Elementwise ops (no broadcasting except the explicit scalar forms).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);  // DomainError on non-positive input
template <typename T> Var<T> max0(const Var<T>& a);  // subgradient 0 at 0

/// Sum over the listed axes (all axes when empty). Reduced axes are dropped.
template <typename T> Var<T> reduce_sum(const Var<T>& a, std::span<const std::size_t> axes = {});

/// Result of a finite-difference gradient check.
struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  /// Coordinates whose perturbation changed some rectifier's sign pattern;
  /// they sit on a kink and are excluded from max_rel_error.
  std::vector<std::size_t> flagged;
};

using ScalarFn = std::function<Var<double>(const Var<double>&)>;

/// Compares reverse-mode gradients of f at x against the five-point central
/// difference (fourth-order accurate). A coordinate whose stencil crosses a
/// rectifier kink is retried with steps down to eps/1000 before it is flagged.
/// f must build its graph from the given leaf. When coords is non-empty only
/// those coordinates are perturbed. Throws NumericError on a non-finite f.
FdReport finite_diff_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-3,
                           std::span<const std::size_t> coords = {});

}  // namespace calcseg
