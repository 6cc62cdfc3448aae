// Copyright 2026 The ovcount Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ovc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or extents that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates an operation precondition (range, finiteness, emptiness).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (missing prerequisites, unwritable outputs).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Bad run configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A data invariant was violated; the message names the invariant.
class InvariantError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class E = ValueError>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}

}  // namespace detail
}  // namespace ovc
