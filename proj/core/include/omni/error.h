// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_ERROR_H_
#define OMNI_ERROR_H_

#include <stdexcept>
#include <string>

namespace omni {

// Bad caller input: out-of-range ids, malformed grids, inconsistent shapes.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or incompatible file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures while running a computation (NaN loss, missing state).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace omni

#endif  // OMNI_ERROR_H_
