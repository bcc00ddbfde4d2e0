// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace calcseg {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape mismatch, bad axis, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Extents do not fit an operation (input smaller than a kernel, odd crop margin, ...).
class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Argument outside a function's mathematical domain, e.g. log of a non-positive value.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or degenerate numeric state (NaN loss, zero variance, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An invalid network, training, or phantom configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Synthetic data could not be generated, e.g. lesion placement kept failing.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents do not follow the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace calcseg
