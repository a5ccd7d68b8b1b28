// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception types shared by every module. Each maps onto one CLI exit code
// class (see tools/rgbt.cpp).

#ifndef RGBT_ERROR_HPP_
#define RGBT_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace rgbt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or combination of values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Index outside its valid range.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed dataset / annotation / detection file.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values met during training or loss evaluation.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint produced by an incompatible format or network layout.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace rgbt

#endif  // RGBT_ERROR_HPP_
